#pragma once

// File formats: input CSVs, hyperparameter JSON, and the report files
// written by the command-line tool.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "fpemu/core.hpp"
#include "fpemu/countryfit.hpp"
#include "fpemu/hypertrain.hpp"
#include "fpemu/synth.hpp"

namespace fpemu::io {

using json = nlohmann::ordered_json;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, std::size_t column,
             const std::string& message)
      : std::runtime_error(file + ":" + std::to_string(line) + ":" + std::to_string(column) +
                           ": " + message),
        file_(file),
        line_(line),
        column_(column) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::string file_;
  std::size_t line_;
  std::size_t column_;
};

// ---------------------------------------------------------------------------
// CSV

struct CsvField {
  std::string text;
  std::size_t column = 1;  // 1-based character position in the line
};

// Splits one line. Double-quoted fields may contain commas; "" is a literal
// quote.
inline std::vector<CsvField> split_csv_line(const std::string& line, const std::string& file,
                                            std::size_t line_no) {
  std::vector<CsvField> out;
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (true) {
    CsvField f;
    f.column = i + 1;
    if (i < n && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < n) {
        if (line[i] == '"') {
          if (i + 1 < n && line[i + 1] == '"') {
            f.text += '"';
            i += 2;
            continue;
          }
          closed = true;
          ++i;
          break;
        }
        f.text += line[i++];
      }
      if (!closed) throw ParseError(file, line_no, f.column, "unterminated quoted field");
      if (i < n && line[i] != ',') {
        throw ParseError(file, line_no, i + 1, "unexpected character after quoted field");
      }
    } else {
      while (i < n && line[i] != ',') f.text += line[i++];
    }
    out.push_back(std::move(f));
    if (i >= n) break;
    ++i;  // comma
  }
  return out;
}

class CsvTable {
 public:
  struct Row {
    std::size_t line = 0;
    std::vector<CsvField> fields;
  };

  static CsvTable read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return parse(in, path);
  }

  static CsvTable parse(std::istream& in, const std::string& name) {
    CsvTable t;
    t.file_ = name;
    std::string line;
    std::size_t line_no = 0;
    bool header = true;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (header && line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      auto fields = split_csv_line(line, name, line_no);
      if (header) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
          std::string h = trim(fields[i].text);
          if (t.index_.count(h)) {
            throw ParseError(name, line_no, fields[i].column, "duplicate column '" + h + "'");
          }
          t.index_[h] = i;
          t.columns_.push_back(h);
        }
        header = false;
        continue;
      }
      if (fields.size() != t.columns_.size()) {
        throw ParseError(name, line_no, 1,
                         "expected " + std::to_string(t.columns_.size()) + " fields, found " +
                             std::to_string(fields.size()));
      }
      t.rows_.push_back({line_no, std::move(fields)});
    }
    if (header) throw ParseError(name, 1, 1, "missing header row");
    return t;
  }

  const std::string& file() const { return file_; }
  const std::vector<Row>& rows() const { return rows_; }
  bool has(const std::string& column) const { return index_.count(column) > 0; }

  void require(const std::vector<std::string>& columns) const {
    for (const auto& c : columns) {
      if (!has(c)) throw ParseError(file_, 1, 1, "missing required column '" + c + "'");
    }
  }

  const CsvField& field(const Row& r, const std::string& column) const {
    auto it = index_.find(column);
    if (it == index_.end()) throw ParseError(file_, 1, 1, "missing column '" + column + "'");
    return r.fields[it->second];
  }

  std::string text(const Row& r, const std::string& column) const {
    return trim(field(r, column).text);
  }

  [[noreturn]] void fail(const Row& r, const std::string& column, const std::string& msg) const {
    throw ParseError(file_, r.line, field(r, column).column, "column '" + column + "': " + msg);
  }

  double number(const Row& r, const std::string& column) const {
    const std::string s = text(r, column);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      fail(r, column, "expected a finite number, got '" + s + "'");
    }
    return v;
  }

  int integer(const Row& r, const std::string& column) const {
    const std::string s = text(r, column);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      fail(r, column, "expected an integer, got '" + s + "'");
    }
    return v;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

 private:
  std::string file_;
  std::vector<std::string> columns_;
  std::map<std::string, std::size_t> index_;
  std::vector<Row> rows_;
};

// Runs `check` on a parsed object and reports a failure at the row.
template <class T>
void check_row(const CsvTable& t, const CsvTable::Row& r, const std::string& column,
               const T& obj) {
  try {
    check(obj);
  } catch (const std::invalid_argument& e) {
    t.fail(r, column, e.what());
  }
}

inline std::vector<SurveyObservation> read_surveys(const CsvTable& t) {
  t.require({"country_id", "group", "year", "value", "se"});
  std::vector<SurveyObservation> out;
  for (const auto& r : t.rows()) {
    SurveyObservation s;
    s.country_id = t.text(r, "country_id");
    if (s.country_id.empty()) t.fail(r, "country_id", "empty country_id");
    try {
      s.group = group_from_string(t.text(r, "group"));
    } catch (const std::invalid_argument& e) {
      t.fail(r, "group", e.what());
    }
    s.year = t.number(r, "year");
    s.value = t.number(r, "value");
    s.se = t.number(r, "se");
    if (t.has("source_id")) s.source_id = t.text(r, "source_id");
    if (!(s.value > 0.0 && s.value < 1.0)) {
      t.fail(r, "value", "survey value must lie strictly inside (0,1)");
    }
    if (!(s.se > 0.0)) t.fail(r, "se", "survey se must be positive");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SurveyObservation> read_surveys(const std::string& path) {
  return read_surveys(CsvTable::read(path));
}

inline EmuKind kind_from_string(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "level") return EmuKind::Level;
  if (l == "rate") return EmuKind::Rate;
  throw std::invalid_argument("kind must be Level or Rate, got '" + s + "'");
}

inline std::vector<EmuObservation> read_emu(const CsvTable& t) {
  t.require({"country_id", "data_type", "year", "kind", "value", "sd", "target_groups"});
  std::vector<EmuObservation> out;
  std::set<std::tuple<std::string, DataType, int, EmuKind>> seen;
  for (const auto& r : t.rows()) {
    EmuObservation e;
    e.country_id = t.text(r, "country_id");
    if (e.country_id.empty()) t.fail(r, "country_id", "empty country_id");
    try {
      e.data_type = data_type_from_code(t.integer(r, "data_type"));
    } catch (const std::invalid_argument& ex) {
      t.fail(r, "data_type", ex.what());
    }
    e.year = t.integer(r, "year");
    try {
      e.kind = kind_from_string(t.text(r, "kind"));
    } catch (const std::invalid_argument& ex) {
      t.fail(r, "kind", ex.what());
    }
    e.value = t.number(r, "value");
    e.sd = t.number(r, "sd");
    std::stringstream groups(t.text(r, "target_groups"));
    std::string g;
    while (std::getline(groups, g, ';')) {
      g = CsvTable::trim(g);
      if (g.empty()) continue;
      try {
        const auto pg = group_from_string(g);
        if (!e.targets(pg)) e.target_groups.push_back(pg);
      } catch (const std::invalid_argument& ex) {
        t.fail(r, "target_groups", ex.what());
      }
    }
    if (t.has("selected")) {
      const auto sel = t.text(r, "selected");
      if (sel == "1" || sel == "true" || sel == "TRUE") {
        e.selected = true;
      } else if (sel == "0" || sel == "false" || sel == "FALSE" || sel.empty()) {
        e.selected = false;
      } else {
        t.fail(r, "selected", "expected 0 or 1, got '" + sel + "'");
      }
    }
    check_row(t, r, "value", e);
    if (!seen.insert({e.country_id, e.data_type, e.year, e.kind}).second) {
      t.fail(r, "year", "duplicate (country_id, data_type, year, kind) row");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<EmuObservation> read_emu(const std::string& path) {
  return read_emu(CsvTable::read(path));
}

inline std::vector<hyper::TrainingRecord> read_training(const CsvTable& t) {
  t.require({"country_id", "data_type", "year", "dz_star", "s", "drho_star"});
  std::vector<hyper::TrainingRecord> out;
  for (const auto& r : t.rows()) {
    hyper::TrainingRecord rec;
    rec.country_id = t.text(r, "country_id");
    if (rec.country_id.empty()) t.fail(r, "country_id", "empty country_id");
    try {
      rec.data_type = data_type_from_code(t.integer(r, "data_type"));
    } catch (const std::invalid_argument& ex) {
      t.fail(r, "data_type", ex.what());
    }
    rec.year = t.integer(r, "year");
    rec.dz_star = t.number(r, "dz_star");
    rec.s = t.number(r, "s");
    if (!(rec.s >= 0.0)) t.fail(r, "s", "s must be >= 0");
    rec.drho_star = t.number(r, "drho_star");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<hyper::TrainingRecord> read_training(const std::string& path) {
  return read_training(CsvTable::read(path));
}

// ---------------------------------------------------------------------------
// Number formatting

// Shortest text that reads back to the same double.
inline std::string num(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  std::string s = os.str();
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("error writing " + path);
}

// ---------------------------------------------------------------------------
// Hyperparameters

inline json hyper_to_json(const HyperEstimates& h) {
  json j;
  j["tau_hat"] = h.tau_hat;
  json types = json::array();
  for (auto d : kAllDataTypes) {
    const auto& t = h[d];
    types.push_back({{"data_type", code(d)},
                     {"label", std::string(label(d))},
                     {"theta_hat", t.theta_hat},
                     {"theta_sd", t.theta_sd},
                     {"ci_low", t.ci_low},
                     {"ci_high", t.ci_high},
                     {"n_obs", t.n_obs},
                     {"from_prior", t.from_prior}});
  }
  j["data_types"] = types;
  return j;
}

inline HyperEstimates hyper_from_json(const json& j, const std::string& name = "hyper") {
  auto bad = [&](const std::string& m) { throw std::runtime_error(name + ": " + m); };
  HyperEstimates h;
  try {
    if (!j.contains("tau_hat") || !j.contains("data_types")) {
      bad("expected keys 'tau_hat' and 'data_types'");
    }
    h.tau_hat = j.at("tau_hat").get<double>();
    std::set<int> seen;
    for (const auto& e : j.at("data_types")) {
      const int c = e.at("data_type").get<int>();
      const auto d = data_type_from_code(c);
      if (!seen.insert(c).second) bad("data_type " + std::to_string(c) + " listed twice");
      auto& t = h[d];
      t.theta_hat = e.at("theta_hat").get<double>();
      t.theta_sd = e.at("theta_sd").get<double>();
      t.ci_low = e.at("ci_low").get<double>();
      t.ci_high = e.at("ci_high").get<double>();
      t.n_obs = e.value("n_obs", 0);
      t.from_prior = e.value("from_prior", false);
    }
    if (seen.size() != 4) bad("all four data types (1-4) must be present");
    check(h);
  } catch (const json::exception& e) {
    bad(e.what());
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  return h;
}

inline HyperEstimates read_hyper(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return hyper_from_json(j, path);
}

inline std::string table1_label(DataType d) {
  return std::string(label(d)) + " (d = " + std::to_string(code(d)) + ")";
}

inline constexpr const char* kTable1Header = "data_type,n,theta_hat,theta_sd,ci_low,ci_high";

inline std::string table1_csv(const HyperEstimates& h) {
  std::ostringstream os;
  os << kTable1Header << '\n';
  for (auto d : kAllDataTypes) {
    const auto& t = h[d];
    os << table1_label(d) << ',' << t.n_obs << ',' << fixed(t.theta_hat, 2) << ','
       << fixed(t.theta_sd, 2) << ',' << fixed(t.ci_low, 2) << ',' << fixed(t.ci_high, 2)
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Country fit outputs

inline constexpr const char* kEstimatesHeader =
    "country_id,group,model,year,median,lo95,hi95,drho_median,drho_lo95,drho_hi95";

inline void write_estimates_rows(std::ostream& os, const country::CountryFitResult& f) {
  for (const auto& y : f.per_year) {
    os << f.country_id << ',' << label(f.group) << ',' << country::label(f.mode) << ','
       << y.year << ',' << num(y.rho.median) << ',' << num(y.rho.lo95) << ','
       << num(y.rho.hi95) << ',';
    if (y.drho) {
      os << num(y.drho->median) << ',' << num(y.drho->lo95) << ',' << num(y.drho->hi95);
    } else {
      os << ",,";
    }
    os << '\n';
  }
}

struct EstimateRow {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  country::FitMode model = country::FitMode::SurveyOnly;
  int year = 0;
  country::Summary rho;
};

inline std::vector<EstimateRow> read_estimates(const std::string& path) {
  const auto t = CsvTable::read(path);
  t.require({"country_id", "group", "model", "year", "median", "lo95", "hi95"});
  std::vector<EstimateRow> out;
  for (const auto& r : t.rows()) {
    EstimateRow e;
    e.country_id = t.text(r, "country_id");
    try {
      e.group = group_from_string(t.text(r, "group"));
    } catch (const std::invalid_argument& ex) {
      t.fail(r, "group", ex.what());
    }
    try {
      e.model = country::mode_from_string(t.text(r, "model"));
    } catch (const std::invalid_argument& ex) {
      t.fail(r, "model", ex.what());
    }
    e.year = t.integer(r, "year");
    e.rho = {t.number(r, "median"), t.number(r, "lo95"), t.number(r, "hi95")};
    out.push_back(std::move(e));
  }
  return out;
}

inline constexpr const char* kPlotHeader = "country_id,group,model,series,year,value,lo95,hi95";

// Long-format plot data: latent level and change bands with the survey and
// EMU points that informed the fit.
inline void write_plot_rows(std::ostream& os, const country::CountryFitResult& f,
                            const std::vector<SurveyObservation>& surveys,
                            const std::vector<EmuObservation>& emu_rates) {
  const std::string prefix = f.country_id + "," + std::string(label(f.group)) + "," +
                             std::string(country::label(f.mode)) + ",";
  for (const auto& y : f.per_year) {
    os << prefix << "mcpr," << y.year << ',' << num(y.rho.median) << ',' << num(y.rho.lo95)
       << ',' << num(y.rho.hi95) << '\n';
  }
  for (const auto& y : f.per_year) {
    if (!y.drho) continue;
    os << prefix << "mcpr_change," << y.year << ',' << num(y.drho->median) << ','
       << num(y.drho->lo95) << ',' << num(y.drho->hi95) << '\n';
  }
  for (const auto& s : surveys) {
    const double l = logit(s.value);
    const double sd = delta_method_se(s.value, s.se);
    os << prefix << "survey," << num(s.year) << ',' << num(s.value) << ','
       << num(inverse_logit(l - 1.96 * sd)) << ',' << num(inverse_logit(l + 1.96 * sd)) << '\n';
  }
  for (const auto& e : emu_rates) {
    os << prefix << "emu_change," << e.year << ',' << num(e.value) << ','
       << num(e.value - 1.96 * e.sd) << ',' << num(e.value + 1.96 * e.sd) << '\n';
  }
}

inline json diagnostics_json(const country::CountryFitResult& f) {
  json j;
  j["country_id"] = f.country_id;
  j["group"] = std::string(label(f.group));
  j["model"] = std::string(country::label(f.mode));
  j["emu_data_type"] = f.emu_type ? json(code(*f.emu_type)) : json(nullptr);
  j["n_surveys"] = f.n_surveys;
  j["n_emu_rates"] = f.n_emu;
  j["year_start"] = f.years.start;
  j["year_end"] = f.years.end;
  j["n_chains"] = f.n_chains;
  j["n_draws"] = f.n_draws;
  j["max_rhat"] = f.max_rhat;
  j["min_ess"] = f.min_ess;
  j["mean_acceptance"] = f.mean_acceptance;
  j["block_acceptance"] = f.block_acceptance;
  j["converged"] = f.converged;
  json sig = json::array();
  for (const auto& s : f.sigma) {
    sig.push_back({{"data_type", code(s.data_type)},
                   {"n_rates", s.n_rates},
                   {"median", s.sigma.median},
                   {"lo95", s.sigma.lo95},
                   {"hi95", s.sigma.hi95},
                   {"log_sigma_mean", s.log_sigma_mean},
                   {"log_sigma_sd", s.log_sigma_sd}});
  }
  j["sigma"] = sig;
  j["warnings"] = f.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Data writers, in the same schemas the readers accept

inline constexpr const char* kSurveyHeader = "country_id,group,year,value,se,source_id";
inline constexpr const char* kEmuHeader =
    "country_id,data_type,year,kind,value,sd,target_groups,selected";
inline constexpr const char* kTrainingHeader = "country_id,data_type,year,dz_star,s,drho_star";

inline std::string surveys_csv(const std::vector<SurveyObservation>& surveys) {
  std::ostringstream os;
  os << kSurveyHeader << '\n';
  for (const auto& s : surveys) {
    os << s.country_id << ',' << label(s.group) << ',' << num(s.year) << ',' << num(s.value)
       << ',' << num(s.se) << ',' << s.source_id << '\n';
  }
  return os.str();
}

inline std::string emu_csv(const std::vector<EmuObservation>& emu) {
  std::ostringstream os;
  os << kEmuHeader << '\n';
  for (const auto& e : emu) {
    os << e.country_id << ',' << code(e.data_type) << ',' << e.year << ','
       << (e.kind == EmuKind::Level ? "Level" : "Rate") << ',' << num(e.value) << ','
       << num(e.sd) << ',';
    for (std::size_t i = 0; i < e.target_groups.size(); ++i) {
      os << (i ? ";" : "") << label(e.target_groups[i]);
    }
    os << ',' << (e.selected ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string training_csv(const std::vector<hyper::TrainingRecord>& records) {
  std::ostringstream os;
  os << kTrainingHeader << '\n';
  for (const auto& r : records) {
    os << r.country_id << ',' << code(r.data_type) << ',' << r.year << ',' << num(r.dz_star)
       << ',' << num(r.s) << ',' << num(r.drho_star) << '\n';
  }
  return os.str();
}

inline std::string mcpr_csv(const std::vector<hyper::McprEstimate>& rows) {
  std::ostringstream os;
  os << "country_id,year,drho\n";
  for (const auto& r : rows) os << r.country_id << ',' << r.year << ',' << num(r.drho) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

inline synth::SynthScenario scenario_from_json(const json& j, const std::string& name = "scenario") {
  static const std::set<std::string> kKnown = {
      "name", "mode", "sampler", "n_countries", "year_start", "year_end", "theta", "tau",
      "process_from_prior", "plausible_low", "plausible_high", "phi", "mu", "omega",
      "start_low", "start_high", "breakpoint", "survey_years", "survey_se_logit", "emu_types",
      "types_per_country", "emu_start", "emu_end", "emu_s", "emu_s_pattern", "emu_s_growth",
      "group", "seed"};
  auto bad = [&](const std::string& m) { throw std::runtime_error(name + ": " + m); };
  if (!j.is_object()) bad("scenario must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!kKnown.count(k)) bad("unknown key '" + k + "'");
  }
  synth::SynthScenario s;
  try {
    s.name = j.value("name", s.name);
    s.n_countries = j.value("n_countries", s.n_countries);
    s.year_start = j.value("year_start", s.year_start);
    s.year_end = j.value("year_end", s.year_end);
    if (j.contains("theta")) {
      const auto th = j.at("theta").get<std::vector<double>>();
      if (th.size() != 4) bad("theta must list four values");
      std::copy(th.begin(), th.end(), s.theta.begin());
    }
    s.tau = j.value("tau", s.tau);
    s.process_from_prior = j.value("process_from_prior", s.process_from_prior);
    s.plausible_low = j.value("plausible_low", s.plausible_low);
    s.plausible_high = j.value("plausible_high", s.plausible_high);
    s.phi = j.value("phi", s.phi);
    s.mu = j.value("mu", s.mu);
    s.omega = j.value("omega", s.omega);
    s.start_low = j.value("start_low", s.start_low);
    s.start_high = j.value("start_high", s.start_high);
    if (j.contains("breakpoint") && !j.at("breakpoint").is_null()) {
      const auto& b = j.at("breakpoint");
      s.breakpoint = synth::Breakpoint{b.at("year").get<int>(), b.at("mu_after").get<double>()};
    }
    if (j.contains("survey_years")) s.survey_years = j.at("survey_years").get<std::vector<int>>();
    s.survey_se_logit = j.value("survey_se_logit", s.survey_se_logit);
    if (j.contains("emu_types")) {
      s.emu_types.clear();
      for (int c : j.at("emu_types").get<std::vector<int>>()) {
        s.emu_types.push_back(data_type_from_code(c));
      }
    }
    s.types_per_country = j.value("types_per_country", s.types_per_country);
    s.emu_start = j.value("emu_start", s.emu_start);
    s.emu_end = j.value("emu_end", s.emu_end);
    s.emu_s = j.value("emu_s", s.emu_s);
    if (j.contains("emu_s_pattern")) {
      const auto p = j.at("emu_s_pattern").get<std::string>();
      if (p == "constant") {
        s.emu_s_pattern = synth::SdPattern::Constant;
      } else if (p == "growing") {
        s.emu_s_pattern = synth::SdPattern::Growing;
      } else {
        bad("emu_s_pattern must be 'constant' or 'growing'");
      }
    }
    s.emu_s_growth = j.value("emu_s_growth", s.emu_s_growth);
    if (j.contains("group")) s.group = group_from_string(j.at("group").get<std::string>());
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    bad(e.what());
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  try {
    synth::check(s);
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  return s;
}

inline json truth_json(const synth::SynthData& d) {
  const auto& s = d.scenario;
  json j;
  j["scenario"] = s.name;
  j["seed"] = s.seed;
  j["theta"] = s.theta;
  j["tau"] = s.tau;
  json countries = json::array();
  for (const auto& t : d.truth) {
    json c;
    c["country_id"] = t.country_id;
    c["phi"] = t.phi;
    c["mu"] = t.mu;
    c["omega"] = t.omega;
    json ls = json::object();
    for (const auto& [dt, v] : t.log_sigma) ls[std::to_string(code(dt))] = v;
    c["log_sigma"] = ls;
    c["year_start"] = t.year_start;
    c["mcpr"] = t.rho;
    countries.push_back(c);
  }
  j["countries"] = countries;
  return j;
}

}  // namespace fpemu::io
