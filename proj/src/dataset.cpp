#include "itr/dataset.hpp"

#include "itr/error.hpp"

#include <algorithm>
#include <cmath>

namespace itr {

Eigen::Index TrialDataset::covariate_dimension() const {
  return subjects.empty() ? 0 : subjects.front().x.size();
}

std::vector<SubjectRecord> TrialDataset::group(int k) const {
  std::vector<SubjectRecord> out;
  for (const auto& s : subjects) {
    if (s.group == k) out.push_back(s);
  }
  return out;
}

std::size_t TrialDataset::group_size(int k) const {
  return static_cast<std::size_t>(
      std::count_if(subjects.begin(), subjects.end(), [k](const SubjectRecord& s) { return s.group == k; }));
}

Eigen::MatrixXd TrialDataset::covariates() const {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(subjects.size()), covariate_dimension());
  for (std::size_t i = 0; i < subjects.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = subjects[i].x.transpose();
  return X;
}

std::vector<int> TrialDataset::assignments() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.group);
  return out;
}

bool TrialDataset::has_oracle() const {
  return !subjects.empty() &&
         std::all_of(subjects.begin(), subjects.end(), [](const SubjectRecord& s) { return s.oracle.has_value(); });
}

std::pair<double, double> TrialDataset::endpoints() const {
  if (!schedule.empty()) {
    const auto [lo, hi] = std::minmax_element(schedule.begin(), schedule.end());
    return {*lo, *hi};
  }
  double lo = INFINITY;
  double hi = -INFINITY;
  for (const auto& s : subjects) {
    for (double t : s.times) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  if (!(hi > lo)) throw DataError("dataset has no time span: cannot determine study endpoints");
  return {lo, hi};
}

void TrialDataset::validate() const {
  const Eigen::Index p = covariate_dimension();
  for (const auto& s : subjects) {
    if (s.group != 1 && s.group != 2) throw DataError("subject " + s.id + ": group must be 1 or 2");
    if (s.x.size() != p) throw DataError("subject " + s.id + ": covariate dimension differs from other subjects");
    if (!s.x.allFinite()) throw DataError("subject " + s.id + ": non-finite covariate");
    if (s.times.size() != s.y.size()) throw DataError("subject " + s.id + ": times and outcomes differ in length");
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      if (!std::isfinite(s.times[j]) || !std::isfinite(s.y[j])) {
        throw DataError("subject " + s.id + ": non-finite time or outcome");
      }
      if (j > 0 && !(s.times[j] > s.times[j - 1])) {
        throw DataError("subject " + s.id + ": visit times must be strictly increasing");
      }
    }
  }
}

std::optional<double> observed_change_score(const SubjectRecord& s) {
  if (s.y.size() < 2) return std::nullopt;
  return s.y.back() - s.y.front();
}

}  // namespace itr
