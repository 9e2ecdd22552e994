#pragma once

// Domain types and the small amount of deterministic math shared by the
// samplers, the fitting code and the validation harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace fpemu {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// A fit whose chains disagree beyond the abort threshold.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Service-statistics data types. Integer codes are the on-disk encoding.
enum class DataType : int {
  EmuClients = 1,
  EmuFacilities = 2,
  FpVisits = 3,
  FpUsers = 4,
};

inline constexpr std::array<DataType, 4> kAllDataTypes = {
    DataType::EmuClients, DataType::EmuFacilities, DataType::FpVisits,
    DataType::FpUsers};

inline int code(DataType d) { return static_cast<int>(d); }

// Zero-based index for per-type arrays.
inline std::size_t index(DataType d) {
  return static_cast<std::size_t>(code(d) - 1);
}

inline DataType data_type_from_code(int c) {
  if (c < 1 || c > 4) {
    throw std::invalid_argument("data_type must be an integer code 1-4, got " +
                                std::to_string(c));
  }
  return static_cast<DataType>(c);
}

inline std::string_view label(DataType d) {
  switch (d) {
    case DataType::EmuClients: return "EMU-clients";
    case DataType::EmuFacilities: return "EMU-facilities";
    case DataType::FpVisits: return "FP visits";
    case DataType::FpUsers: return "FP users";
  }
  return "?";
}

enum class PopulationGroup { MWRA, UWRA, AWRA };

inline constexpr std::array<PopulationGroup, 3> kAllGroups = {
    PopulationGroup::MWRA, PopulationGroup::UWRA, PopulationGroup::AWRA};

inline std::string_view label(PopulationGroup g) {
  switch (g) {
    case PopulationGroup::MWRA: return "MWRA";
    case PopulationGroup::UWRA: return "UWRA";
    case PopulationGroup::AWRA: return "AWRA";
  }
  return "?";
}

// Marital-status wording used in the validation report.
inline std::string_view marital_label(PopulationGroup g) {
  switch (g) {
    case PopulationGroup::MWRA: return "Married";
    case PopulationGroup::UWRA: return "Unmarried";
    case PopulationGroup::AWRA: return "All";
  }
  return "?";
}

inline PopulationGroup group_from_string(std::string_view s) {
  for (auto g : kAllGroups) {
    if (s == label(g)) return g;
  }
  throw std::invalid_argument("unknown population group '" + std::string(s) +
                              "' (expected MWRA, UWRA or AWRA)");
}

enum class EmuKind { Level, Rate };

struct EmuObservation {
  std::string country_id;
  DataType data_type = DataType::EmuClients;
  int year = 0;
  EmuKind kind = EmuKind::Rate;
  double value = 0.0;
  double sd = 0.0;
  std::vector<PopulationGroup> target_groups;
  bool selected = false;

  bool targets(PopulationGroup g) const {
    return std::find(target_groups.begin(), target_groups.end(), g) !=
           target_groups.end();
  }
};

struct SurveyObservation {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  double year = 0.0;  // fractional midyear allowed
  double value = 0.0;
  double se = 0.0;
  std::string source_id;
};

// Throws std::invalid_argument when an observation breaks its range rules.
inline void check(const EmuObservation& e) {
  if (e.country_id.empty()) throw std::invalid_argument("empty country_id");
  if (!(e.sd >= 0.0) || !std::isfinite(e.sd)) {
    throw std::invalid_argument("EMU sd must be finite and >= 0");
  }
  if (e.kind == EmuKind::Level && !(e.value >= 0.0 && e.value <= 1.0)) {
    throw std::invalid_argument("EMU level must lie in [0,1]");
  }
  if (e.kind == EmuKind::Rate && !(e.value >= -1.0 && e.value <= 1.0)) {
    throw std::invalid_argument("EMU rate must lie in [-1,1]");
  }
  if (e.target_groups.empty()) {
    throw std::invalid_argument("EMU observation needs at least one target group");
  }
}

inline void check(const SurveyObservation& s) {
  if (s.country_id.empty()) throw std::invalid_argument("empty country_id");
  if (!(s.value > 0.0 && s.value < 1.0)) {
    throw std::invalid_argument(
        "survey value must lie strictly inside (0,1); boundary values are "
        "rejected");
  }
  if (!(s.se > 0.0) || !std::isfinite(s.se)) {
    throw std::invalid_argument("survey se must be positive");
  }
  if (!std::isfinite(s.year)) throw std::invalid_argument("survey year not finite");
}

// Plug-in summary of the data-type hyperparameters. Per-type arrays are
// indexed with index(DataType).
struct TypeHyper {
  double theta_hat = 0.0;  // mean of log sigma
  double theta_sd = 1.0;   // posterior SD of theta
  double ci_low = 0.0;     // 95% interval of exp(theta)
  double ci_high = 0.0;
  int n_obs = 0;
  bool from_prior = false;  // no training records for this type
};

struct HyperEstimates {
  std::array<TypeHyper, 4> types;
  double tau_hat = 1.0;

  const TypeHyper& operator[](DataType d) const { return types[index(d)]; }
  TypeHyper& operator[](DataType d) { return types[index(d)]; }
};

inline void check(const HyperEstimates& h) {
  if (!(h.tau_hat > 0.0)) throw std::invalid_argument("tau_hat must be > 0");
  for (auto d : kAllDataTypes) {
    const auto& t = h[d];
    if (!(t.theta_sd > 0.0)) throw std::invalid_argument("theta_sd must be > 0");
    if (!(t.ci_low < t.ci_high)) {
      throw std::invalid_argument("ci_low must be below ci_high");
    }
    if (!std::isfinite(t.theta_hat)) {
      throw std::invalid_argument("theta_hat must be finite");
    }
  }
}

// Values reported for the four data types in the published training fit.
inline HyperEstimates published_hyper_defaults() {
  HyperEstimates h;
  h[DataType::EmuClients] = {-4.06, 0.27, 0.01, 0.03, 73, false};
  h[DataType::EmuFacilities] = {-2.77, 0.41, 0.03, 0.10, 30, false};
  h[DataType::FpVisits] = {-3.56, 0.35, 0.01, 0.06, 60, false};
  h[DataType::FpUsers] = {-3.10, 0.31, 0.02, 0.08, 40, false};
  h.tau_hat = 0.84;
  return h;
}

// ---------------------------------------------------------------------------
// Transforms and densities

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("logit: argument must lie in (0,1)");
  }
  return std::log(p / (1.0 - p));
}

inline double inverse_logit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Standard error of logit(p) given the standard error of p.
inline double delta_method_se(double p, double se_p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("delta_method_se: p must lie in (0,1)");
  }
  if (!(se_p > 0.0)) {
    throw std::domain_error("delta_method_se: se_p must be positive");
  }
  return se_p / (p * (1.0 - p));
}

inline double combined_sd(double s_obs, double sigma_cd) {
  if (!(s_obs >= 0.0) || !(sigma_cd >= 0.0)) {
    throw std::domain_error("combined_sd: arguments must be >= 0");
  }
  return std::hypot(s_obs, sigma_cd);
}

inline double normal_logpdf(double x, double mean, double sd) {
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  const double z = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

inline double half_cauchy_logpdf(double x, double scale) {
  if (!(scale > 0.0)) {
    throw std::domain_error("half_cauchy_logpdf: scale must be positive");
  }
  if (x < 0.0) return kNegInf;
  const double r = x / scale;
  return std::log(2.0 / (std::numbers::pi * scale * (1.0 + r * r)));
}

// Annual first differences of EMU levels for one country and data type.
// Pairs with a gap other than exactly one year are skipped.
inline std::vector<EmuObservation> rate_of_change(
    const std::vector<EmuObservation>& levels) {
  std::vector<EmuObservation> out;
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const auto& prev = levels[i - 1];
    const auto& cur = levels[i];
    if (prev.kind != EmuKind::Level || cur.kind != EmuKind::Level) {
      throw std::invalid_argument("rate_of_change expects Level observations");
    }
    if (cur.year < prev.year) {
      throw std::invalid_argument("rate_of_change: levels must be sorted by year");
    }
    if (cur.year - prev.year != 1) continue;
    EmuObservation r = cur;
    r.kind = EmuKind::Rate;
    r.value = cur.value - prev.value;
    r.sd = std::hypot(cur.sd, prev.sd);
    out.push_back(std::move(r));
  }
  return out;
}

// Rate rows of a mixed EMU data set: Rate rows are used as given and Level
// rows are differenced per (country, data type). A supplied Rate row takes
// precedence over one derived from levels for the same year.
inline std::vector<EmuObservation> to_rates(const std::vector<EmuObservation>& obs) {
  std::map<std::tuple<std::string, DataType, int, EmuKind>, std::size_t> seen;
  std::map<std::pair<std::string, DataType>, std::vector<EmuObservation>> levels;
  std::vector<EmuObservation> out;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& e = obs[i];
    auto key = std::make_tuple(e.country_id, e.data_type, e.year, e.kind);
    if (!seen.emplace(key, i).second) {
      throw std::invalid_argument("duplicate EMU row for " + e.country_id + ", data type " +
                                  std::to_string(code(e.data_type)) + ", year " +
                                  std::to_string(e.year));
    }
    if (e.kind == EmuKind::Rate) {
      out.push_back(e);
    } else {
      levels[{e.country_id, e.data_type}].push_back(e);
    }
  }
  for (auto& [key, series] : levels) {
    std::sort(series.begin(), series.end(),
              [](const auto& a, const auto& b) { return a.year < b.year; });
    for (auto& r : rate_of_change(series)) {
      if (!seen.count(std::make_tuple(r.country_id, r.data_type, r.year, EmuKind::Rate))) {
        out.push_back(std::move(r));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.country_id, a.data_type, a.year) <
           std::tie(b.country_id, b.data_type, b.year);
  });
  return out;
}

// Linear-interpolation percentile (type 7) of an unsorted sample.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sample_sd(const std::vector<double>& xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace fpemu
