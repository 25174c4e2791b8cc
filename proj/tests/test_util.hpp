#pragma once

#include "itr/dataset.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace itr::test {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) { return random_matrix(n, 1, rng).col(0); }

inline SubjectRecord record(std::string id, int group, Eigen::VectorXd x, std::vector<double> times,
                            std::vector<double> y) {
  SubjectRecord s;
  s.id = std::move(id);
  s.group = group;
  s.x = std::move(x);
  s.times = std::move(times);
  s.y = std::move(y);
  return s;
}

// Rows (1, t, t^2).
inline Eigen::MatrixXd quadratic_rows(const std::vector<double>& times) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(times.size()), 3);
  for (std::size_t j = 0; j < times.size(); ++j) m.row(static_cast<Eigen::Index>(j)) << 1.0, times[j], times[j] * times[j];
  return m;
}

}  // namespace itr::test
