#pragma once

// Leave-one-out validation on the most recent survey, predictive metrics,
// survey-only vs survey+EMU impact, and the exploratory EMU-vs-mCPR export.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fpemu/core.hpp"
#include "fpemu/countryfit.hpp"
#include "fpemu/hypertrain.hpp"
#include "fpemu/mcmc.hpp"

namespace fpemu::validate {

// Stable 64-bit FNV-1a, used to give every case its own seed independent of
// case order and thread count.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t case_seed(std::uint64_t seed, const std::string& country,
                               PopulationGroup g) {
  std::uint64_t h = fnv1a(country, seed ^ 0x9e3779b97f4a7c15ULL);
  return fnv1a(label(g), h);
}

struct ValidationCase {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  SurveyObservation held_out;
  std::vector<SurveyObservation> training;
  std::vector<EmuObservation> emu;  // rates attached to this group
  std::optional<DataType> emu_type;
};

struct CaseSet {
  std::vector<ValidationCase> cases;
  std::vector<std::string> skipped;
};

struct CaseOptions {
  country::EmuSelection selection;
  // Drop EMU rates dated after the held-out survey year.
  bool truncate_emu_after_holdout = false;
};

// One case per country and group with at least two surveys. The latest
// survey is held out; a tie for the latest year skips the case.
inline CaseSet build_cases(const std::vector<SurveyObservation>& surveys,
                           const std::vector<EmuObservation>& emu,
                           const CaseOptions& options = {}) {
  std::map<std::pair<std::string, PopulationGroup>, std::vector<SurveyObservation>> by_key;
  for (const auto& s : surveys) {
    check(s);
    by_key[{s.country_id, s.group}].push_back(s);
  }
  std::map<std::string, std::vector<EmuObservation>> emu_by_country;
  for (const auto& e : emu) emu_by_country[e.country_id].push_back(e);

  std::map<std::string, country::AttachedEmu> attached;
  CaseSet out;
  for (auto& [key, list] : by_key) {
    const auto& [cid, group] = key;
    std::stable_sort(list.begin(), list.end(),
                     [](const auto& a, const auto& b) { return a.year < b.year; });
    if (list.size() < 2) {
      out.skipped.push_back(cid + " " + std::string(label(group)) +
                            ": only one survey, nothing left to train on");
      continue;
    }
    if (list[list.size() - 2].year == list.back().year) {
      out.skipped.push_back(cid + " " + std::string(label(group)) +
                            ": two surveys share the most recent year");
      continue;
    }
    ValidationCase vc;
    vc.country_id = cid;
    vc.group = group;
    vc.held_out = list.back();
    vc.training.assign(list.begin(), list.end() - 1);

    auto it = emu_by_country.find(cid);
    if (it != emu_by_country.end()) {
      auto [pos, inserted] = attached.try_emplace(cid);
      if (inserted) pos->second = country::attach_emu(it->second, options.selection);
      vc.emu_type = pos->second.data_type;
      for (const auto& r : pos->second.rates(group)) {
        if (options.truncate_emu_after_holdout && r.year > vc.held_out.year) continue;
        vc.emu.push_back(r);
      }
    }
    out.cases.push_back(std::move(vc));
  }
  return out;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// 95% predictive interval of a new survey at the held-out year: each latent
// draw is perturbed by survey sampling noise on the logit scale.
inline Interval predictive_interval(const std::vector<double>& eta_draws, double value,
                                    double se, std::uint64_t seed) {
  if (eta_draws.empty()) throw std::invalid_argument("predictive_interval: no draws");
  const double sd = delta_method_se(value, se);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> y(eta_draws.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = inverse_logit(eta_draws[i] + sd * z(rng));
  return {quantile(y, 0.025), quantile(y, 0.975)};
}

inline Interval predictive_interval(const country::CountryFitResult& fit,
                                    const SurveyObservation& held_out, std::uint64_t seed) {
  if (!fit.years.contains(held_out.year)) {
    throw std::out_of_range("held-out year " + std::to_string(held_out.year) +
                            " outside the fit's grid");
  }
  return predictive_interval(fit.eta_draws_at(held_out.year), held_out.value, held_out.se,
                             seed);
}

struct MetricRow {
  int n = 0;
  double coverage = 0.0;  // percent
  double me = 0.0;        // percentage points
  double mae = 0.0;
  double rmse = 0.0;
};

// errors: observed minus predicted, in percentage points (positive means the
// model under-predicts).
inline MetricRow metrics(const std::vector<double>& errors, const std::vector<bool>& hits) {
  if (errors.empty()) throw std::invalid_argument("metrics: empty error list");
  if (errors.size() != hits.size()) {
    throw std::invalid_argument("metrics: errors and hits differ in length");
  }
  MetricRow r;
  r.n = static_cast<int>(errors.size());
  double se = 0.0, ae = 0.0, sq = 0.0;
  int h = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    se += errors[i];
    ae += std::abs(errors[i]);
    sq += errors[i] * errors[i];
    h += hits[i] ? 1 : 0;
  }
  const double n = static_cast<double>(errors.size());
  r.me = se / n;
  r.mae = ae / n;
  r.rmse = std::sqrt(sq / n);
  r.coverage = 100.0 * h / n;
  return r;
}

struct CaseResult {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  country::FitMode model = country::FitMode::SurveyOnly;
  std::optional<DataType> emu_type;
  int n_emu = 0;
  double year = 0.0;
  double observed = 0.0;
  double se = 0.0;
  double median = 0.0;
  Interval interval;
  double error_pp = 0.0;
  bool hit = false;
  double max_rhat = 1.0;
  bool converged = true;
};

struct ReportRow {
  PopulationGroup group = PopulationGroup::MWRA;
  country::FitMode model = country::FitMode::SurveyOnly;
  MetricRow metrics;
};

struct ValidationReport {
  std::vector<ReportRow> rows;
  std::vector<CaseResult> details;
  std::vector<std::string> skipped;
  std::vector<std::string> warnings;
  bool all_converged = true;
};

struct RunOptions {
  int jobs = 1;
  bool abort_on_nonconvergence = false;
};

// Year grid shared by both arms of a case.
inline country::YearRange case_years(const ValidationCase& c) {
  auto r = country::default_year_range(c.training, c.emu, 0);
  r.end = std::max(r.end, static_cast<int>(std::ceil(c.held_out.year)));
  return r;
}

inline std::vector<CaseResult> run_case(const ValidationCase& c, const HyperEstimates& hyper,
                                        mcmc::SamplerConfig config, bool abort,
                                        std::vector<std::string>* warnings = nullptr) {
  config.seed = case_seed(config.seed, c.country_id, c.group);
  const auto years = case_years(c);
  std::vector<CaseResult> out;
  for (auto mode : {country::FitMode::SurveyOnly, country::FitMode::SurveyEmu}) {
    country::FitOptions fo;
    fo.abort_on_nonconvergence = abort;
    fo.country_id = c.country_id;
    fo.group = c.group;
    const auto fit = country::fit_country(
        c.training, mode == country::FitMode::SurveyEmu ? c.emu : std::vector<EmuObservation>{},
        hyper, mode, years, config, fo);
    CaseResult r;
    r.country_id = c.country_id;
    r.group = c.group;
    r.model = mode;
    r.emu_type = mode == country::FitMode::SurveyEmu ? c.emu_type : std::nullopt;
    r.n_emu = fit.n_emu;
    r.year = c.held_out.year;
    r.observed = c.held_out.value;
    r.se = c.held_out.se;
    r.median = quantile(fit.rho_draws_at(c.held_out.year), 0.5);
    r.interval = predictive_interval(fit, c.held_out, config.seed ^ 0x5bd1e995ULL);
    r.error_pp = 100.0 * (r.observed - r.median);
    r.hit = r.observed >= r.interval.lo && r.observed <= r.interval.hi;
    r.max_rhat = fit.max_rhat;
    r.converged = fit.converged;
    if (warnings) {
      for (const auto& w : fit.warnings) warnings->push_back(c.country_id + ": " + w);
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<ReportRow> summarize_rows(const std::vector<CaseResult>& details) {
  std::map<std::pair<PopulationGroup, country::FitMode>,
           std::pair<std::vector<double>, std::vector<bool>>>
      acc;
  for (const auto& d : details) {
    auto& [e, h] = acc[{d.group, d.model}];
    e.push_back(d.error_pp);
    h.push_back(d.hit);
  }
  std::vector<ReportRow> rows;
  for (const auto& [key, v] : acc) rows.push_back({key.first, key.second, metrics(v.first, v.second)});
  return rows;
}

// Fits both arms for every case. Cases are independent and may run on
// several threads; results are ordered by country and group.
inline ValidationReport run_validation(const CaseSet& set, const HyperEstimates& hyper,
                                       const mcmc::SamplerConfig& config,
                                       const RunOptions& options = {}) {
  const auto& cases = set.cases;
  std::vector<std::vector<CaseResult>> results(cases.size());
  std::vector<std::vector<std::string>> warns(cases.size());
  std::vector<std::exception_ptr> errors(cases.size());
  mcmc::SamplerConfig cfg = config;
  const int jobs = std::max(1, options.jobs);
  if (jobs > 1) cfg.parallel_chains = false;

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      try {
        results[i] = run_case(cases[i], hyper, cfg, options.abort_on_nonconvergence, &warns[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ValidationReport rep;
  rep.skipped = set.skipped;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (auto& r : results[i]) {
      rep.all_converged = rep.all_converged && r.converged;
      rep.details.push_back(std::move(r));
    }
    for (auto& w : warns[i]) rep.warnings.push_back(std::move(w));
  }
  std::sort(rep.details.begin(), rep.details.end(), [](const auto& a, const auto& b) {
    return std::tie(a.country_id, a.group, a.model) < std::tie(b.country_id, b.group, b.model);
  });
  rep.rows = summarize_rows(rep.details);
  return rep;
}

// ---------------------------------------------------------------------------
// Report files

inline std::string model_label(country::FitMode m) {
  return m == country::FitMode::SurveyOnly ? "Survey-only" : "Survey+EMU";
}

namespace detail {
inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  std::string s = os.str();
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}
}  // namespace detail

inline constexpr const char* kTable2Header = "marital_status,model,n,coverage,me,mae,rmse";

inline void write_table2(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << kTable2Header << '\n';
  for (const auto& r : rows) {
    os << marital_label(r.group) << ',' << model_label(r.model) << ',' << r.metrics.n << ','
       << detail::fixed(r.metrics.coverage, 1) << ',' << detail::fixed(r.metrics.me, 2) << ','
       << detail::fixed(r.metrics.mae, 2) << ',' << detail::fixed(r.metrics.rmse, 2) << '\n';
  }
}

inline constexpr const char* kDetailHeader =
    "country_id,group,model,emu_data_type,n_emu,year,observed,se,median,lo95,hi95,error_pp,"
    "inside,max_rhat";

inline void write_details(std::ostream& os, const std::vector<CaseResult>& details) {
  os << kDetailHeader << '\n';
  os << std::setprecision(10);
  for (const auto& d : details) {
    os << d.country_id << ',' << label(d.group) << ',' << country::label(d.model) << ','
       << (d.emu_type ? std::to_string(code(*d.emu_type)) : std::string()) << ',' << d.n_emu
       << ',' << d.year << ',' << d.observed << ',' << d.se << ',' << d.median << ','
       << d.interval.lo << ',' << d.interval.hi << ',' << d.error_pp << ','
       << (d.hit ? 1 : 0) << ',' << d.max_rhat << '\n';
  }
}

// ---------------------------------------------------------------------------
// Impact of EMU on target-year estimates

struct ImpactInput {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  std::optional<DataType> data_type;
  country::Summary survey_only;  // rho at the target year
  country::Summary survey_emu;
};

struct ImpactRow {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  std::optional<DataType> data_type;
  double diff_pp = 0.0;        // median with EMU minus median without
  double ci_width_diff_pp = 0.0;
};

struct ImpactAggregate {
  PopulationGroup group = PopulationGroup::MWRA;
  std::optional<DataType> data_type;
  int n = 0;
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};

struct ImpactTable {
  std::vector<ImpactRow> rows;
  std::vector<ImpactAggregate> aggregates;
};

class PairingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline ImpactInput impact_input(const country::CountryFitResult& survey_only,
                                const country::CountryFitResult& survey_emu, int target_year) {
  if (survey_only.mode != country::FitMode::SurveyOnly ||
      survey_emu.mode != country::FitMode::SurveyEmu) {
    throw PairingError("impact needs one survey-only and one survey+EMU fit");
  }
  if (survey_only.country_id != survey_emu.country_id || survey_only.group != survey_emu.group) {
    throw PairingError("impact fits belong to different country/group pairs: " +
                       survey_only.country_id + "/" + std::string(label(survey_only.group)) +
                       " vs " + survey_emu.country_id + "/" +
                       std::string(label(survey_emu.group)));
  }
  return {survey_only.country_id, survey_only.group, survey_emu.emu_type,
          survey_only.at_year(target_year).rho, survey_emu.at_year(target_year).rho};
}

inline ImpactTable impact_analysis(std::vector<ImpactInput> inputs) {
  std::sort(inputs.begin(), inputs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.country_id, a.group) < std::tie(b.country_id, b.group);
  });
  ImpactTable t;
  std::map<std::pair<PopulationGroup, int>, std::vector<double>> groups;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    if (i > 0 && inputs[i - 1].country_id == in.country_id && inputs[i - 1].group == in.group) {
      throw PairingError("duplicate impact pair for " + in.country_id + " " +
                         std::string(label(in.group)));
    }
    ImpactRow r;
    r.country_id = in.country_id;
    r.group = in.group;
    r.data_type = in.data_type;
    r.diff_pp = 100.0 * (in.survey_emu.median - in.survey_only.median);
    r.ci_width_diff_pp = 100.0 * ((in.survey_emu.hi95 - in.survey_emu.lo95) -
                                  (in.survey_only.hi95 - in.survey_only.lo95));
    t.rows.push_back(r);
    groups[{r.group, r.data_type ? code(*r.data_type) : 0}].push_back(r.diff_pp);
  }
  for (const auto& [key, diffs] : groups) {
    ImpactAggregate a;
    a.group = key.first;
    if (key.second != 0) a.data_type = data_type_from_code(key.second);
    a.n = static_cast<int>(diffs.size());
    a.min = *std::min_element(diffs.begin(), diffs.end());
    a.max = *std::max_element(diffs.begin(), diffs.end());
    a.median = quantile(diffs, 0.5);
    t.aggregates.push_back(a);
  }
  return t;
}

inline constexpr const char* kImpactHeader =
    "row_type,country_id,group,data_type,n,diff_pp,ci_width_diff_pp,min_pp,median_pp,max_pp";

inline void write_impact(std::ostream& os, const ImpactTable& t) {
  os << kImpactHeader << '\n' << std::setprecision(10);
  auto dt = [](const std::optional<DataType>& d) {
    return d ? std::string(label(*d)) : std::string("none");
  };
  for (const auto& r : t.rows) {
    os << "pair," << r.country_id << ',' << label(r.group) << ',' << dt(r.data_type) << ",1,"
       << r.diff_pp << ',' << r.ci_width_diff_pp << ",,,\n";
  }
  for (const auto& a : t.aggregates) {
    os << "aggregate,," << label(a.group) << ',' << dt(a.data_type) << ',' << a.n << ",,,"
       << a.min << ',' << a.median << ',' << a.max << '\n';
  }
}

// ---------------------------------------------------------------------------
// EMU vs survey-informed mCPR rates of change

struct RocRow {
  std::string country_id;
  DataType data_type = DataType::EmuClients;
  int year = 0;
  double dz = 0.0;
  double s = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  double drho = 0.0;
};

// Joins EMU rates to mCPR rate estimates on (country, year). With
// `last_survey_year` set, keeps only years before each country's most recent
// survey; countries missing from that map are dropped.
inline std::vector<RocRow> export_roc_comparison(
    const std::vector<EmuObservation>& emu_rates,
    const std::vector<hyper::McprEstimate>& mcpr,
    const std::optional<std::map<std::string, double>>& last_survey_year = std::nullopt) {
  std::map<std::pair<std::string, int>, double> drho;
  for (const auto& m : mcpr) drho[{m.country_id, m.year}] = m.drho;
  std::vector<RocRow> out;
  for (const auto& e : to_rates(emu_rates)) {
    auto it = drho.find({e.country_id, e.year});
    if (it == drho.end()) continue;
    if (last_survey_year) {
      auto ls = last_survey_year->find(e.country_id);
      if (ls == last_survey_year->end() || !(e.year < ls->second)) continue;
    }
    out.push_back({e.country_id, e.data_type, e.year, e.value, e.sd, e.value - 1.96 * e.sd,
                   e.value + 1.96 * e.sd, it->second});
  }
  return out;
}

inline constexpr const char* kRocHeader = "country_id,data_type,year,dz,s,lo95,hi95,drho";

inline void write_roc(std::ostream& os, const std::vector<RocRow>& rows) {
  os << kRocHeader << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.country_id << ',' << code(r.data_type) << ',' << r.year << ',' << r.dz << ','
       << r.s << ',' << r.lo95 << ',' << r.hi95 << ',' << r.drho << '\n';
  }
}

}  // namespace fpemu::validate
