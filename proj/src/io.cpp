#include "itr/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <unordered_map>

namespace itr {

namespace {

std::string kind_label(IngestError::Kind kind) {
  switch (kind) {
    case IngestError::Kind::header: return "bad header";
    case IngestError::Kind::unknown_subject: return "unknown subject";
    case IngestError::Kind::duplicate_visit: return "duplicate visit";
    case IngestError::Kind::non_numeric: return "non-numeric field";
    case IngestError::Kind::bad_group: return "group outside {1,2}";
    case IngestError::Kind::inconsistent_group: return "inconsistent group";
    case IngestError::Kind::other: return "malformed row";
  }
  return "malformed row";
}

std::string trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Reads non-blank lines with their 1-based line numbers.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line_no_ == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
      if (trim(line).empty()) continue;
      fields = split(line);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(IngestError::Kind kind, const std::string& detail) const {
    throw IngestError(kind, name_, line_no_, detail);
  }

  double number(const std::string& field, const char* column) const {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
      fail(IngestError::Kind::non_numeric, std::string(column) + " '" + field + "' is not a finite number");
    }
    return v;
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t line_no_ = 0;
};

std::size_t column_of(const std::vector<std::string>& header, const std::string& name, const CsvReader& reader) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) reader.fail(IngestError::Kind::header, "missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

struct Visit {
  double t;
  double y;
};

}  // namespace

IngestError::IngestError(Kind kind, const std::string& source, std::size_t line, const std::string& detail)
    : DataError(source + ":" + std::to_string(line) + ": " + kind_label(kind) + ": " + detail), kind_(kind), line_(line) {}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw DomainError("cannot format number");
  return std::string(buf, ptr);
}

void write_outcomes_csv(const TrialDataset& data, std::ostream& out) {
  out << "subject_id,group,time,outcome\n";
  for (const auto& s : data.subjects) {
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      out << s.id << ',' << s.group << ',' << format_number(s.times[j]) << ',' << format_number(s.y[j]) << '\n';
    }
  }
}

void write_covariates_csv(const TrialDataset& data, std::ostream& out) {
  out << "subject_id";
  for (Eigen::Index c = 0; c < data.covariate_dimension(); ++c) out << ",x" << c + 1;
  out << '\n';
  for (const auto& s : data.subjects) {
    out << s.id;
    for (Eigen::Index c = 0; c < s.x.size(); ++c) out << ',' << format_number(s.x(c));
    out << '\n';
  }
}

void write_oracle_csv(const TrialDataset& data, std::ostream& out) {
  if (!data.has_oracle()) throw DataError("dataset has no potential outcomes to write");
  out << "subject_id,time,potential1,potential2\n";
  for (const auto& s : data.subjects) {
    const auto& tr = s.oracle->trajectories;
    if (tr[0].size() != data.schedule.size() || tr[1].size() != data.schedule.size()) {
      throw DataError("subject " + s.id + ": potential trajectories do not match the schedule");
    }
    for (std::size_t j = 0; j < data.schedule.size(); ++j) {
      out << s.id << ',' << format_number(data.schedule[j]) << ',' << format_number(tr[0][j]) << ','
          << format_number(tr[1][j]) << '\n';
    }
  }
}

TrialDataset parse_dataset(std::istream& outcomes, std::istream& covariates, std::istream* oracle,
                           const std::string& outcomes_name, const std::string& covariates_name,
                           const std::string& oracle_name) {
  TrialDataset data;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> fields;

  CsvReader cov(covariates, covariates_name);
  if (!cov.next(fields)) cov.fail(IngestError::Kind::header, "file is empty");
  if (fields.empty() || fields[0] != "subject_id") cov.fail(IngestError::Kind::header, "first column must be subject_id");
  const std::size_t p = fields.size() - 1;
  if (p == 0) cov.fail(IngestError::Kind::header, "no covariate columns");
  while (cov.next(fields)) {
    if (fields.size() != p + 1) {
      cov.fail(IngestError::Kind::other, "expected " + std::to_string(p + 1) + " fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) cov.fail(IngestError::Kind::other, "empty subject_id");
    if (index.contains(fields[0])) cov.fail(IngestError::Kind::other, "subject '" + fields[0] + "' listed twice");
    SubjectRecord s;
    s.id = fields[0];
    s.group = 0;
    s.x.resize(static_cast<Eigen::Index>(p));
    for (std::size_t c = 0; c < p; ++c) s.x(static_cast<Eigen::Index>(c)) = cov.number(fields[c + 1], "covariate");
    index.emplace(s.id, data.subjects.size());
    data.subjects.push_back(std::move(s));
  }

  CsvReader out(outcomes, outcomes_name);
  if (!out.next(fields)) out.fail(IngestError::Kind::header, "file is empty");
  const std::size_t c_id = column_of(fields, "subject_id", out);
  const std::size_t c_group = column_of(fields, "group", out);
  const std::size_t c_time = column_of(fields, "time", out);
  const std::size_t c_y = column_of(fields, "outcome", out);
  const std::size_t width = fields.size();
  std::vector<std::map<double, double>> visits(data.subjects.size());
  while (out.next(fields)) {
    if (fields.size() != width) {
      out.fail(IngestError::Kind::other, "expected " + std::to_string(width) + " fields, got " + std::to_string(fields.size()));
    }
    const auto it = index.find(fields[c_id]);
    if (it == index.end()) out.fail(IngestError::Kind::unknown_subject, "'" + fields[c_id] + "' is not in the covariates file");
    SubjectRecord& s = data.subjects[it->second];
    const double g = out.number(fields[c_group], "group");
    if (g != 1.0 && g != 2.0) out.fail(IngestError::Kind::bad_group, "group '" + fields[c_group] + "' must be 1 or 2");
    const int group = static_cast<int>(g);
    if (s.group != 0 && s.group != group) {
      out.fail(IngestError::Kind::inconsistent_group, "subject '" + s.id + "' appears in both groups");
    }
    s.group = group;
    const double t = out.number(fields[c_time], "time");
    const double y = out.number(fields[c_y], "outcome");
    if (!visits[it->second].emplace(t, y).second) {
      out.fail(IngestError::Kind::duplicate_visit, "subject '" + s.id + "' already has a visit at time " + fields[c_time]);
    }
  }

  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    SubjectRecord& s = data.subjects[i];
    if (s.group == 0) throw DataError(covariates_name + ": subject '" + s.id + "' has no outcome rows");
    for (const auto& [t, y] : visits[i]) {
      s.times.push_back(t);
      s.y.push_back(y);
    }
  }

  std::vector<double> schedule;
  if (oracle != nullptr) {
    CsvReader orc(*oracle, oracle_name);
    if (!orc.next(fields)) orc.fail(IngestError::Kind::header, "file is empty");
    const std::size_t o_id = column_of(fields, "subject_id", orc);
    const std::size_t o_time = column_of(fields, "time", orc);
    const std::size_t o_1 = column_of(fields, "potential1", orc);
    const std::size_t o_2 = column_of(fields, "potential2", orc);
    const std::size_t o_width = fields.size();
    std::vector<std::map<double, std::array<double, 2>>> potential(data.subjects.size());
    while (orc.next(fields)) {
      if (fields.size() != o_width) orc.fail(IngestError::Kind::other, "wrong number of fields");
      const auto it = index.find(fields[o_id]);
      if (it == index.end()) orc.fail(IngestError::Kind::unknown_subject, "'" + fields[o_id] + "' is not in the covariates file");
      const double t = orc.number(fields[o_time], "time");
      const std::array<double, 2> v{orc.number(fields[o_1], "potential1"), orc.number(fields[o_2], "potential2")};
      if (!potential[it->second].emplace(t, v).second) {
        orc.fail(IngestError::Kind::duplicate_visit, "subject '" + fields[o_id] + "' already has a row at time " + fields[o_time]);
      }
    }
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
      const auto& rows = potential[i];
      std::vector<double> times;
      for (const auto& [t, v] : rows) times.push_back(t);
      if (i == 0) schedule = times;
      if (rows.size() < 2 || times != schedule) {
        throw DataError(oracle_name + ": subject '" + data.subjects[i].id + "' does not cover the common schedule");
      }
      SubjectOracle o;
      for (const auto& [t, v] : rows) {
        o.trajectories[0].push_back(v[0]);
        o.trajectories[1].push_back(v[1]);
      }
      for (std::size_t k = 0; k < 2; ++k) o.change_scores[k] = o.trajectories[k].back() - o.trajectories[k].front();
      o.decision = o.change_scores[1] > o.change_scores[0] ? 2 : 1;
      data.subjects[i].oracle = std::move(o);
    }
  } else {
    for (const auto& s : data.subjects) schedule.insert(schedule.end(), s.times.begin(), s.times.end());
    std::sort(schedule.begin(), schedule.end());
    schedule.erase(std::unique(schedule.begin(), schedule.end()), schedule.end());
  }
  data.schedule = std::move(schedule);
  data.validate();
  return data;
}

DatasetFiles DatasetFiles::in_directory(const std::filesystem::path& dir, const std::string& prefix) {
  DatasetFiles f;
  f.outcomes = dir / (prefix + "outcomes.csv");
  f.covariates = dir / (prefix + "covariates.csv");
  const auto oracle = dir / (prefix + "oracle.csv");
  if (std::filesystem::exists(oracle)) f.oracle = oracle;
  return f;
}

TrialDataset read_dataset(const DatasetFiles& files) {
  auto open = [](const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
  };
  std::ifstream outcomes = open(files.outcomes);
  std::ifstream covariates = open(files.covariates);
  std::optional<std::ifstream> oracle;
  if (files.oracle) oracle.emplace(open(*files.oracle));
  return parse_dataset(outcomes, covariates, oracle ? &*oracle : nullptr, files.outcomes.filename().string(),
                       files.covariates.filename().string(),
                       files.oracle ? files.oracle->filename().string() : std::string("oracle"));
}

DatasetFiles write_dataset(const TrialDataset& data, const std::filesystem::path& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  DatasetFiles f;
  f.outcomes = dir / (prefix + "outcomes.csv");
  f.covariates = dir / (prefix + "covariates.csv");
  auto write = [](const std::filesystem::path& path, auto&& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    body(out);
  };
  write(f.outcomes, [&](std::ostream& o) { write_outcomes_csv(data, o); });
  write(f.covariates, [&](std::ostream& o) { write_covariates_csv(data, o); });
  if (data.has_oracle()) {
    f.oracle = dir / (prefix + "oracle.csv");
    write(*f.oracle, [&](std::ostream& o) { write_oracle_csv(data, o); });
  }
  return f;
}

namespace {

nlohmann::json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto n = static_cast<Eigen::Index>(j.size());
  Eigen::MatrixXd m(n, n == 0 ? 0 : static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::VectorXd row = vector_from(j[static_cast<std::size_t>(r)]);
    if (row.size() != m.cols()) throw DataError("ragged matrix in JSON");
    m.row(r) = row.transpose();
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const BasisSpec& spec) {
  if (spec.kind() == BasisSpec::Kind::polynomial) return {{"kind", "polynomial"}, {"degree", spec.degree()}};
  return {{"kind", "cubic_bspline"},
          {"knots", spec.interior_knots()},
          {"lower", spec.lower()},
          {"upper", spec.upper()}};
}

BasisSpec basis_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "polynomial") return BasisSpec::polynomial(j.at("degree").get<int>());
    if (kind == "cubic_bspline") {
      return BasisSpec::cubic_bspline(j.at("knots").get<std::vector<double>>(), j.at("lower").get<double>(),
                                      j.at("upper").get<double>());
    }
    throw ConfigError("unknown basis kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid basis specification: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid basis specification: ") + e.what());
  }
}

nlohmann::json to_json(const GroupFit& fit) {
  return {{"form", fit.form == ModelForm::tensor ? "tensor" : "linear_index"},
          {"time_dimension", fit.time_dimension},
          {"coefficients", vector_json(fit.coefficients)},
          {"D", matrix_json(fit.D)},
          {"sigma2", fit.sigma2},
          {"loglik", fit.loglik},
          {"iterations", fit.iterations},
          {"converged", fit.converged}};
}

GroupFit group_fit_from_json(const nlohmann::json& j) {
  try {
    GroupFit fit;
    const std::string form = j.at("form").get<std::string>();
    if (form != "tensor" && form != "linear_index") throw DataError("unknown model form '" + form + "'");
    fit.form = form == "tensor" ? ModelForm::tensor : ModelForm::linear_index;
    fit.time_dimension = j.at("time_dimension").get<Eigen::Index>();
    fit.coefficients = vector_from(j.at("coefficients"));
    fit.D = matrix_from(j.at("D"));
    fit.sigma2 = j.at("sigma2").get<double>();
    fit.loglik = j.at("loglik").get<double>();
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid group fit: ") + e.what());
  }
}

nlohmann::json to_json(const FittedITR& itr) {
  return {{"alpha", vector_json(itr.signature.alpha)},
          {"method", to_string(itr.signature.method)},
          {"iterations", itr.signature.iterations},
          {"converged", itr.signature.converged},
          {"objective_trace", itr.signature.objective_trace},
          {"warnings", itr.signature.warnings},
          {"form", itr.specs.form == ModelForm::tensor ? "tensor" : "linear_index"},
          {"time_basis", to_json(itr.specs.time)},
          {"index_basis", to_json(itr.specs.index)},
          {"random_basis", to_json(itr.specs.random)},
          {"t1", itr.t1},
          {"tm", itr.tm},
          {"prefer", itr.prefer == Preference::larger_ats ? "larger" : "smaller"},
          {"groups", {to_json(itr.group_fits[0]), to_json(itr.group_fits[1])}}};
}

FittedITR fitted_itr_from_json(const nlohmann::json& j) {
  try {
    FittedITR itr;
    itr.signature.alpha = vector_from(j.at("alpha"));
    itr.signature.method = method_from_string(j.at("method").get<std::string>());
    itr.signature.iterations = j.at("iterations").get<int>();
    itr.signature.converged = j.at("converged").get<bool>();
    itr.signature.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    itr.signature.warnings = j.at("warnings").get<std::vector<std::string>>();
    itr.specs.form = j.at("form").get<std::string>() == "tensor" ? ModelForm::tensor : ModelForm::linear_index;
    itr.specs.time = basis_from_json(j.at("time_basis"));
    itr.specs.index = basis_from_json(j.at("index_basis"));
    itr.specs.random = basis_from_json(j.at("random_basis"));
    itr.t1 = j.at("t1").get<double>();
    itr.tm = j.at("tm").get<double>();
    itr.prefer = j.at("prefer").get<std::string>() == "smaller" ? Preference::smaller_ats : Preference::larger_ats;
    itr.group_fits = {group_fit_from_json(j.at("groups").at(0)), group_fit_from_json(j.at("groups").at(1))};
    return itr;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid fitted rule: ") + e.what());
  }
}

}  // namespace itr
