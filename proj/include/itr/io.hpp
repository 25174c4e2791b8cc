#pragma once

#include "itr/dataset.hpp"
#include "itr/error.hpp"
#include "itr/policy.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace itr {

/// Malformed ingestion input, with the offending source and line.
class IngestError : public DataError {
 public:
  enum class Kind { header, unknown_subject, duplicate_visit, non_numeric, bad_group, inconsistent_group, other };

  IngestError(Kind kind, const std::string& source, std::size_t line, const std::string& detail);

  Kind kind() const { return kind_; }
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);

/// subject_id,group,time,outcome, one row per observed visit.
void write_outcomes_csv(const TrialDataset& data, std::ostream& out);
/// subject_id,x1,...,xp
void write_covariates_csv(const TrialDataset& data, std::ostream& out);
/// subject_id,time,potential1,potential2 on the full schedule. Requires
/// every subject to carry potential outcomes.
void write_oracle_csv(const TrialDataset& data, std::ostream& out);

/// Joins long-format outcomes with wide covariates. The `*_name`
/// arguments label diagnostics. Subjects appear in covariate-file order.
TrialDataset parse_dataset(std::istream& outcomes, std::istream& covariates, std::istream* oracle = nullptr,
                           const std::string& outcomes_name = "outcomes", const std::string& covariates_name = "covariates",
                           const std::string& oracle_name = "oracle");

struct DatasetFiles {
  std::filesystem::path outcomes;
  std::filesystem::path covariates;
  std::optional<std::filesystem::path> oracle;

  /// outcomes.csv, covariates.csv and (if present) oracle.csv inside dir.
  static DatasetFiles in_directory(const std::filesystem::path& dir, const std::string& prefix = "");
};

TrialDataset read_dataset(const DatasetFiles& files);
/// Writes the CSVs; oracle.csv only when the dataset has potential outcomes.
DatasetFiles write_dataset(const TrialDataset& data, const std::filesystem::path& dir, const std::string& prefix = "");

nlohmann::json to_json(const BasisSpec& spec);
BasisSpec basis_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroupFit& fit);
GroupFit group_fit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FittedITR& itr);
FittedITR fitted_itr_from_json(const nlohmann::json& j);

}  // namespace itr
