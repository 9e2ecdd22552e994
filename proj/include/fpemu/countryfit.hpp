#pragma once

// Single-country, single-group latent mCPR trajectory.
//
// Latent process on the logit scale over an annual grid t0..t1:
//   d_t = eta_t - eta_{t-1}
//   d_{t0+1} ~ N(mu, omega^2 / (1 - phi^2))
//   d_t      ~ N(phi d_{t-1} + (1 - phi) mu, omega^2),   t >= t0 + 2
// Surveys:    logit(y) ~ N(eta(year), delta_method_se(y, se)^2)
// EMU rates:  dz ~ N(rho_t - rho_{t-1}, s^2 + sigma_d^2),
//             log sigma_d ~ N(theta_hat_d, tau_hat^2)
// Priors:     phi ~ U(0,1), mu ~ N(0, 0.25^2), omega ~ C+(0, 0.05),
//             eta_{t0} ~ N(logit(first survey), 1)

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpemu/core.hpp"
#include "fpemu/mcmc.hpp"

namespace fpemu::country {

inline constexpr double kMuPriorSd = 0.25;
inline constexpr double kOmegaPriorScale = 0.05;
inline constexpr double kEtaStartPriorSd = 1.0;

enum class FitMode { SurveyOnly, SurveyEmu };

inline std::string_view label(FitMode m) {
  return m == FitMode::SurveyOnly ? "survey-only" : "survey+EMU";
}

inline FitMode mode_from_string(std::string_view s) {
  if (s == "survey-only") return FitMode::SurveyOnly;
  if (s == "survey+EMU" || s == "survey+emu") return FitMode::SurveyEmu;
  throw std::invalid_argument("unknown fit mode '" + std::string(s) +
                              "' (expected survey-only or survey+EMU)");
}

struct YearRange {
  int start = 0;
  int end = 0;
  int size() const { return end - start + 1; }
  bool contains(double year) const { return year >= start && year <= end; }
};

class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NoSurveyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SelectionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CountryParams {
  double phi = 0.5;
  double mu = 0.0;
  double omega = 0.05;
  std::vector<double> eta;        // one per grid year
  std::vector<double> log_sigma;  // one per attached EMU data type
};

// Grid covering all survey and EMU years plus a forecast horizon past the
// last data year.
inline YearRange default_year_range(const std::vector<SurveyObservation>& surveys,
                                    const std::vector<EmuObservation>& emu_rates,
                                    int horizon = 5) {
  if (surveys.empty()) throw NoSurveyError("at least one survey observation is required");
  int start = std::numeric_limits<int>::max();
  int last = std::numeric_limits<int>::min();
  for (const auto& s : surveys) {
    start = std::min(start, static_cast<int>(std::floor(s.year)));
    last = std::max(last, static_cast<int>(std::ceil(s.year)));
  }
  for (const auto& e : emu_rates) {
    start = std::min(start, e.year - 1);
    last = std::max(last, e.year);
  }
  return {start, last + horizon};
}

// ---------------------------------------------------------------------------
// Model

class CountryModel {
 public:
  CountryModel(const std::vector<SurveyObservation>& surveys,
               const std::vector<EmuObservation>& emu_rates, const HyperEstimates& hyper,
               FitMode mode, YearRange years)
      : mode_(mode), years_(years), hyper_(hyper) {
    if (surveys.empty()) {
      throw NoSurveyError("country fit needs at least one survey observation");
    }
    if (years.size() < 2) throw std::invalid_argument("year range must span two or more years");
    if (mode == FitMode::SurveyEmu && emu_rates.empty()) {
      throw StructuralError("survey+EMU mode requested without EMU rate observations");
    }

    const SurveyObservation* first = &surveys.front();
    for (const auto& s : surveys) {
      check(s);
      if (!years.contains(s.year)) {
        throw std::invalid_argument("survey year " + std::to_string(s.year) +
                                    " outside the fit's year range");
      }
      SurveyTerm term;
      const double offset = s.year - years.start;
      term.lo = static_cast<std::size_t>(std::floor(offset));
      term.frac = offset - std::floor(offset);
      if (term.lo + 1 >= static_cast<std::size_t>(years.size())) {
        term.lo = static_cast<std::size_t>(years.size() - 1);
        term.frac = 0.0;
      }
      term.y = logit(s.value);
      term.sd = delta_method_se(s.value, s.se);
      surveys_.push_back(term);
      if (s.year < first->year) first = &s;
    }
    eta_prior_mean_ = logit(first->value);

    if (mode == FitMode::SurveyEmu) {
      std::set<DataType> types;
      for (const auto& e : emu_rates) types.insert(e.data_type);
      emu_types_.assign(types.begin(), types.end());
      for (const auto& e : emu_rates) {
        if (e.kind != EmuKind::Rate) {
          throw std::invalid_argument("country fit expects EMU Rate observations");
        }
        if (!(e.year > years.start && e.year <= years.end)) {
          throw std::invalid_argument("EMU rate year " + std::to_string(e.year) +
                                      " outside the fit's year range");
        }
        EmuTerm term;
        term.t = static_cast<std::size_t>(e.year - years.start);
        term.dz = e.value;
        term.s2 = e.sd * e.sd;
        term.slot = static_cast<std::size_t>(
            std::find(emu_types_.begin(), emu_types_.end(), e.data_type) -
            emu_types_.begin());
        emu_.push_back(term);
      }
    }
  }

  FitMode mode() const { return mode_; }
  const YearRange& years() const { return years_; }
  std::size_t n_years() const { return static_cast<std::size_t>(years_.size()); }
  const std::vector<DataType>& emu_types() const { return emu_types_; }
  double eta_prior_mean() const { return eta_prior_mean_; }

  // Log posterior on (phi, mu, omega, eta path, log sigma).
  double log_posterior(const CountryParams& p) const {
    if (p.eta.size() != n_years() || p.log_sigma.size() != emu_types_.size()) {
      throw std::invalid_argument("country parameters do not match the model layout");
    }
    if (!(p.phi > 0.0 && p.phi < 1.0) || !(p.omega > 0.0) || !std::isfinite(p.omega)) {
      return kNegInf;
    }
    double lp = normal_logpdf(p.mu, 0.0, kMuPriorSd) +
                half_cauchy_logpdf(p.omega, kOmegaPriorScale) +
                normal_logpdf(p.eta[0], eta_prior_mean_, kEtaStartPriorSd);

    // Process prior on first differences.
    const double log_omega = std::log(p.omega);
    const double first_sd = p.omega / std::sqrt(1.0 - p.phi * p.phi);
    double prev = p.eta[1] - p.eta[0];
    lp += normal_logpdf(prev, p.mu, first_sd);
    const double drift = (1.0 - p.phi) * p.mu;
    double ss = 0.0;
    for (std::size_t t = 2; t < n_years(); ++t) {
      const double d = p.eta[t] - p.eta[t - 1];
      const double r = d - p.phi * prev - drift;
      ss += r * r;
      prev = d;
    }
    const double n_inner = static_cast<double>(n_years() - 2);
    lp += -n_inner * (kLogSqrt2Pi + log_omega) - 0.5 * ss / (p.omega * p.omega);

    for (const auto& s : surveys_) {
      const double eta = s.frac == 0.0
                             ? p.eta[s.lo]
                             : p.eta[s.lo] + s.frac * (p.eta[s.lo + 1] - p.eta[s.lo]);
      lp += normal_logpdf(s.y, eta, s.sd);
    }

    if (mode_ == FitMode::SurveyEmu) {
      std::vector<double> sigma2(emu_types_.size());
      for (std::size_t k = 0; k < emu_types_.size(); ++k) {
        const auto& h = hyper_[emu_types_[k]];
        lp += normal_logpdf(p.log_sigma[k], h.theta_hat, hyper_.tau_hat);
        sigma2[k] = std::exp(2.0 * p.log_sigma[k]);
      }
      for (const auto& e : emu_) {
        const double drho = inverse_logit(p.eta[e.t]) - inverse_logit(p.eta[e.t - 1]);
        const double var = e.s2 + sigma2[e.slot];
        if (!(var > 0.0)) return kNegInf;
        const double r = e.dz - drho;
        lp += -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * r * r / var;
      }
    }
    return std::isnan(lp) ? kNegInf : lp;
  }

  // Sampler coordinates: eta_start, logit phi, mu, log omega, standardized
  // innovations eps_1..eps_{T-1}, then log sigma per EMU type.
  std::size_t dim() const { return 4 + (n_years() - 1) + emu_types_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out = {"eta_start", "logit_phi", "mu", "log_omega"};
    for (int y = years_.start + 1; y <= years_.end; ++y) {
      out.push_back("eps[" + std::to_string(y) + "]");
    }
    for (auto d : emu_types_) out.push_back("log_sigma[" + std::to_string(code(d)) + "]");
    return out;
  }

  CountryParams unpack(std::span<const double> x) const {
    CountryParams p;
    unpack_into(x, p);
    return p;
  }

  void unpack_into(std::span<const double> x, CountryParams& p) const {
    p.phi = inverse_logit(x[1]);
    p.mu = x[2];
    p.omega = std::exp(x[3]);
    const std::size_t n = n_years();
    p.eta.resize(n);
    p.eta[0] = x[0];
    double d = p.mu + p.omega / std::sqrt(1.0 - p.phi * p.phi) * x[4];
    p.eta[1] = p.eta[0] + d;
    const double drift = (1.0 - p.phi) * p.mu;
    for (std::size_t t = 2; t < n; ++t) {
      d = p.phi * d + drift + p.omega * x[3 + t];
      p.eta[t] = p.eta[t - 1] + d;
    }
    p.log_sigma.assign(x.begin() + static_cast<long>(3 + n), x.end());
  }

  // Updates of mu, log omega and logit phi that keep the eta path fixed by
  // re-solving the innovations. Interleaved with the coordinate updates they
  // let the process parameters move when the path is pinned by data.
  std::vector<mcmc::Move> path_preserving_moves() const {
    const std::size_t n_eps = n_years() - 1;
    mcmc::Move shift_mu = [n_eps](std::span<const double> x, double h,
                                  std::vector<double>& out) {
      out.assign(x.begin(), x.end());
      const double phi = inverse_logit(x[1]);
      const double omega = std::exp(x[3]);
      out[2] = x[2] + h;
      out[4] = x[4] - h * std::sqrt(1.0 - phi * phi) / omega;
      for (std::size_t t = 2; t <= n_eps; ++t) out[3 + t] = x[3 + t] - h * (1.0 - phi) / omega;
      return 0.0;
    };
    mcmc::Move scale_omega = [n_eps](std::span<const double> x, double h,
                                     std::vector<double>& out) {
      out.assign(x.begin(), x.end());
      out[3] = x[3] + h;
      const double f = std::exp(-h);
      for (std::size_t t = 1; t <= n_eps; ++t) out[3 + t] = x[3 + t] * f;
      return -h * static_cast<double>(n_eps);
    };
    mcmc::Move shift_phi = [n_eps](std::span<const double> x, double h,
                                   std::vector<double>& out) {
      out.assign(x.begin(), x.end());
      const double phi = inverse_logit(x[1]);
      const double phi_new = inverse_logit(x[1] + h);
      const double omega = std::exp(x[3]);
      const double root = std::sqrt(1.0 - phi * phi);
      const double root_new = std::sqrt(1.0 - phi_new * phi_new);
      if (!(root > 0.0) || !(root_new > 0.0)) return kNegInf;
      out[1] = x[1] + h;
      // Deviations of the differences from mu under the current phi.
      double e_prev = omega / root * x[4];
      out[4] = e_prev * root_new / omega;
      for (std::size_t t = 2; t <= n_eps; ++t) {
        const double e = phi * e_prev + omega * x[3 + t];
        out[3 + t] = (e - phi_new * e_prev) / omega;
        e_prev = e;
      }
      return std::log(root_new) - std::log(root);
    };
    return {shift_mu, scale_omega, shift_phi};
  }

  // Redraws (eta_start, eps) jointly from a Gaussian approximation of their
  // conditional posterior. Survey terms are linear in these coordinates;
  // EMU terms are linearized around the path at the point the Gaussian is
  // built. With `coordinate` set, that coordinate first takes a random-walk
  // step h, so the parameter and the path move together.
  mcmc::Kernel path_kernel(std::optional<std::size_t> coordinate = std::nullopt) const {
    mcmc::Kernel k;
    k.adaptive = coordinate.has_value();
    k.propose = [this, coordinate](std::span<const double> x, double h, std::mt19937_64& rng,
                                   std::vector<double>& out) {
      thread_local PathGaussian fwd, rev;
      thread_local Eigen::VectorXd z, z_new, xi;
      thread_local std::vector<double> point;
      const auto n = static_cast<Eigen::Index>(n_years());
      point.assign(x.begin(), x.end());
      if (coordinate) point[*coordinate] += h;
      path_gaussian(point, fwd);
      xi.resize(n);
      std::normal_distribution<double> normal;
      for (Eigen::Index i = 0; i < n; ++i) xi[i] = normal(rng);
      z_new = fwd.mean + fwd.chol.matrixU().solve(xi);
      out.assign(point.begin(), point.end());
      out[0] = z_new[0];
      for (Eigen::Index j = 1; j < n; ++j) out[3 + static_cast<std::size_t>(j)] = z_new[j];

      point.assign(out.begin(), out.end());
      if (coordinate) point[*coordinate] = x[*coordinate];
      path_gaussian(point, rev);
      z.resize(n);
      z[0] = x[0];
      for (Eigen::Index j = 1; j < n; ++j) z[j] = x[3 + static_cast<std::size_t>(j)];
      return rev.log_density(z) - fwd.log_density(z_new);
    };
    return k;
  }

  // Path redraw alone, then joint with each process parameter and log sigma.
  std::vector<mcmc::Kernel> path_kernels() const {
    std::vector<mcmc::Kernel> out = {path_kernel(), path_kernel(1), path_kernel(2),
                                     path_kernel(3)};
    for (std::size_t k = 0; k < emu_types_.size(); ++k) out.push_back(path_kernel(3 + n_years() + k));
    return out;
  }

  // Density on the sampler coordinates: log_posterior plus the log
  // Jacobian of the map to (phi, omega, eta).
  double sampling_log_density(std::span<const double> x) const {
    thread_local CountryParams p;
    unpack_into(x, p);
    const double lp = log_posterior(p);
    if (!std::isfinite(lp)) return kNegInf;
    const double one_minus_phi2 = 1.0 - p.phi * p.phi;
    if (!(one_minus_phi2 > 0.0) || !(p.phi > 0.0)) return kNegInf;
    const double log_jac = std::log(p.phi) + std::log1p(-p.phi) +
                           static_cast<double>(n_years()) * x[3] -
                           0.5 * std::log(one_minus_phi2);
    return lp + log_jac;
  }

 private:
  static constexpr double kLogSqrt2Pi = 0.91893853320467274178;

  struct PathGaussian {
    Eigen::MatrixXd a;  // d eta / d (eta_start, eps)
    Eigen::VectorXd b;
    Eigen::MatrixXd precision;
    Eigen::VectorXd shift;
    Eigen::LLT<Eigen::MatrixXd> chol;
    Eigen::VectorXd mean;
    double log_det_half = 0.0;

    double log_density(const Eigen::VectorXd& z) const {
      const Eigen::VectorXd r = chol.matrixU() * (z - mean);
      return log_det_half - 0.5 * r.squaredNorm();
    }
  };

  void path_gaussian(std::span<const double> x, PathGaussian& g) const {
    const auto n = static_cast<Eigen::Index>(n_years());
    const double phi = inverse_logit(x[1]);
    const double mu = x[2];
    const double omega = std::exp(x[3]);
    g.a.setZero(n, n);
    g.b.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
      g.a(t, 0) = 1.0;
      g.b[t] = static_cast<double>(t) * mu;
    }
    for (Eigen::Index j = 1; j < n; ++j) {
      const double c = omega * (j == 1 ? 1.0 / std::sqrt(1.0 - phi * phi) : 1.0);
      double acc = 0.0, pw = 1.0;
      for (Eigen::Index t = j; t < n; ++t) {
        acc += pw;
        pw *= phi;
        g.a(t, j) = c * acc;
      }
    }

    g.precision.setIdentity(n, n);
    g.shift.setZero(n);
    const double prior_prec = 1.0 / (kEtaStartPriorSd * kEtaStartPriorSd);
    g.precision(0, 0) = prior_prec;
    g.shift[0] = prior_prec * eta_prior_mean_;

    Eigen::RowVectorXd row(n);
    for (const auto& s : surveys_) {
      double off = g.b[static_cast<Eigen::Index>(s.lo)];
      row = g.a.row(static_cast<Eigen::Index>(s.lo));
      if (s.frac != 0.0) {
        const auto hi = static_cast<Eigen::Index>(s.lo + 1);
        row = (1.0 - s.frac) * row + s.frac * g.a.row(hi);
        off = (1.0 - s.frac) * off + s.frac * g.b[hi];
      }
      const double w = 1.0 / (s.sd * s.sd);
      g.precision.noalias() += w * row.transpose() * row;
      g.shift.noalias() += (w * (s.y - off)) * row.transpose();
    }

    if (mode_ == FitMode::SurveyEmu && !emu_.empty()) {
      Eigen::VectorXd z(n);
      z[0] = x[0];
      for (Eigen::Index j = 1; j < n; ++j) z[j] = x[3 + static_cast<std::size_t>(j)];
      const Eigen::VectorXd eta = g.a * z + g.b;
      const std::size_t base = 3 + n_years();
      for (const auto& e : emu_) {
        const auto t = static_cast<Eigen::Index>(e.t);
        const double r1 = inverse_logit(eta[t]);
        const double r0 = inverse_logit(eta[t - 1]);
        row = r1 * (1.0 - r1) * g.a.row(t) - r0 * (1.0 - r0) * g.a.row(t - 1);
        const double off = (r1 - r0) - row.dot(z);
        const double w = 1.0 / (e.s2 + std::exp(2.0 * x[base + e.slot]));
        g.precision.noalias() += w * row.transpose() * row;
        g.shift.noalias() += (w * (e.dz - off)) * row.transpose();
      }
    }

    g.chol.compute(g.precision);
    g.mean = g.chol.solve(g.shift);
    g.log_det_half = g.chol.matrixLLT().diagonal().array().log().sum();
  }

  struct SurveyTerm {
    std::size_t lo = 0;
    double frac = 0.0;
    double y = 0.0;
    double sd = 1.0;
  };
  struct EmuTerm {
    std::size_t t = 1;
    double dz = 0.0;
    double s2 = 0.0;
    std::size_t slot = 0;
  };

  FitMode mode_;
  YearRange years_;
  HyperEstimates hyper_;
  double eta_prior_mean_ = 0.0;
  std::vector<SurveyTerm> surveys_;
  std::vector<EmuTerm> emu_;
  std::vector<DataType> emu_types_;
};

inline double log_posterior_country(const CountryParams& params,
                                    const std::vector<SurveyObservation>& surveys,
                                    const std::vector<EmuObservation>& emu_rates,
                                    const HyperEstimates& hyper, FitMode mode,
                                    YearRange years) {
  return CountryModel(surveys, emu_rates, hyper, mode, years).log_posterior(params);
}

// ---------------------------------------------------------------------------
// EMU attachment

struct EmuSelection {
  std::optional<DataType> override_type;
};

struct AttachedEmu {
  std::optional<DataType> data_type;
  std::map<PopulationGroup, std::vector<EmuObservation>> by_group;

  const std::vector<EmuObservation>& rates(PopulationGroup g) const {
    static const std::vector<EmuObservation> kNone;
    auto it = by_group.find(g);
    return it == by_group.end() ? kNone : it->second;
  }
};

// Picks the one data type used for a country (config override, else the
// `selected` flag) and attaches each of its rates to every target group.
inline AttachedEmu attach_emu(const std::vector<EmuObservation>& country_emu,
                              const EmuSelection& selection = {}) {
  AttachedEmu out;
  const auto rates = to_rates(country_emu);
  std::set<std::string> countries;
  for (const auto& e : country_emu) countries.insert(e.country_id);
  if (countries.size() > 1) {
    throw std::invalid_argument("attach_emu expects observations for a single country");
  }

  if (selection.override_type) {
    out.data_type = selection.override_type;
  } else {
    std::set<DataType> flagged;
    for (const auto& e : country_emu) {
      if (e.selected) flagged.insert(e.data_type);
    }
    if (flagged.size() > 1) {
      throw SelectionError("more than one EMU data type is flagged as selected for country " +
                           *countries.begin());
    }
    if (flagged.empty()) return out;
    out.data_type = *flagged.begin();
  }

  bool any = false;
  for (const auto& r : rates) {
    if (r.data_type != *out.data_type) continue;
    any = true;
    for (auto g : r.target_groups) out.by_group[g].push_back(r);
  }
  if (!any) {
    throw SelectionError("selected EMU data type " + std::string(label(*out.data_type)) +
                         " has no rate observations" +
                         (countries.empty() ? std::string() : " for " + *countries.begin()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fit

struct Summary {
  double median = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

inline Summary summarize(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  auto q = [&](double p) {
    const double h = p * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
  };
  return {q(0.5), q(0.025), q(0.975)};
}

struct YearSummary {
  int year = 0;
  Summary rho;
  std::optional<Summary> drho;  // absent for the first grid year
};

struct SigmaSummary {
  DataType data_type = DataType::EmuClients;
  int n_rates = 0;
  Summary sigma;
  double log_sigma_mean = 0.0;
  double log_sigma_sd = 0.0;
};

struct FitOptions {
  bool abort_on_nonconvergence = true;
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
};

struct CountryFitResult {
  std::string country_id;
  PopulationGroup group = PopulationGroup::MWRA;
  FitMode mode = FitMode::SurveyOnly;
  YearRange years;
  std::vector<YearSummary> per_year;
  std::vector<SigmaSummary> sigma;
  std::optional<DataType> emu_type;
  int n_surveys = 0;
  int n_emu = 0;

  // Latent logit trajectory per draw, chain-major, n_draws x n_years.
  std::vector<double> eta;
  std::size_t n_draws = 0;
  int n_chains = 0;
  mcmc::PosteriorDraws draws;

  double max_rhat = 1.0;  // over eta at data years
  double min_ess = 0.0;
  double mean_acceptance = 0.0;
  double block_acceptance = 0.0;
  bool converged = true;
  std::vector<std::string> warnings;

  std::size_t n_years() const { return static_cast<std::size_t>(years.size()); }
  double eta_draw(std::size_t draw, std::size_t t) const { return eta[draw * n_years() + t]; }

  // eta of one draw at a possibly fractional year.
  double eta_at(std::size_t draw, double year) const {
    if (!years.contains(year)) {
      throw std::out_of_range("year " + std::to_string(year) + " outside the fit's grid");
    }
    const double offset = year - years.start;
    const auto lo = static_cast<std::size_t>(std::floor(offset));
    const double frac = offset - std::floor(offset);
    if (frac == 0.0 || lo + 1 >= n_years()) return eta_draw(draw, lo);
    return eta_draw(draw, lo) + frac * (eta_draw(draw, lo + 1) - eta_draw(draw, lo));
  }

  std::vector<double> eta_draws_at(double year) const {
    std::vector<double> out(n_draws);
    for (std::size_t i = 0; i < n_draws; ++i) out[i] = eta_at(i, year);
    return out;
  }

  std::vector<double> rho_draws_at(double year) const {
    auto out = eta_draws_at(year);
    for (auto& v : out) v = inverse_logit(v);
    return out;
  }

  const YearSummary& at_year(int year) const {
    if (year < years.start || year > years.end) {
      throw std::out_of_range("year " + std::to_string(year) + " outside the fit's grid");
    }
    return per_year[static_cast<std::size_t>(year - years.start)];
  }
};

inline std::vector<std::vector<double>> initial_points(
    const CountryModel& model, const std::vector<SurveyObservation>& surveys,
    const HyperEstimates& hyper, const mcmc::SamplerConfig& cfg) {
  // Least-squares line through the survey logits gives the starting drift.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& s : surveys) {
    const double x = s.year - model.years().start;
    const double y = logit(s.value);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(surveys.size());
  double slope = 0.0;
  const double denom = n * sxx - sx * sx;
  if (surveys.size() > 1 && std::abs(denom) > 1e-12) slope = (n * sxy - sx * sy) / denom;
  slope = std::clamp(slope, -0.3, 0.3);
  const double intercept = (sy - slope * sx) / n;

  std::vector<std::vector<double>> inits;
  for (int c = 0; c < cfg.n_chains; ++c) {
    auto rng = mcmc::detail::substream(cfg.seed, c, 1u << 20);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.2, 0.8);
    std::vector<double> x(model.dim());
    x[0] = intercept + 0.2 * z(rng);
    x[1] = logit(u(rng));
    x[2] = slope + 0.02 * z(rng);
    x[3] = std::log(0.04) + 0.3 * z(rng);
    for (std::size_t t = 1; t < model.n_years(); ++t) x[3 + t] = 0.3 * z(rng);
    const std::size_t base = 3 + model.n_years();
    for (std::size_t k = 0; k < model.emu_types().size(); ++k) {
      x[base + k] = hyper[model.emu_types()[k]].theta_hat + 0.3 * z(rng);
    }
    inits.push_back(std::move(x));
  }
  return inits;
}

// Fits one country and population group. In survey+EMU mode with no EMU rates
// the fit is identical to the survey-only fit but keeps the survey+EMU tag.
inline CountryFitResult fit_country(const std::vector<SurveyObservation>& surveys,
                                    const std::vector<EmuObservation>& emu_rates,
                                    const HyperEstimates& hyper, FitMode mode,
                                    YearRange years, const mcmc::SamplerConfig& config,
                                    const FitOptions& options = {}) {
  if (surveys.empty()) {
    throw NoSurveyError("country fit refused: no survey observations (EMU-only fits are "
                        "not supported)");
  }
  const FitMode model_mode =
      (mode == FitMode::SurveyEmu && emu_rates.empty()) ? FitMode::SurveyOnly : mode;
  const CountryModel model(surveys, model_mode == FitMode::SurveyEmu ? emu_rates
                                                                     : std::vector<EmuObservation>{},
                           hyper, model_mode, years);

  auto target = [&model](std::span<const double> x) { return model.sampling_log_density(x); };

  CountryFitResult res;
  res.country_id = options.country_id.empty() ? surveys.front().country_id : options.country_id;
  res.group = options.group;
  res.mode = mode;
  res.years = years;
  res.n_surveys = static_cast<int>(surveys.size());
  res.n_emu = model_mode == FitMode::SurveyEmu ? static_cast<int>(emu_rates.size()) : 0;
  if (!model.emu_types().empty()) res.emu_type = model.emu_types().front();
  res.draws = mcmc::sample(target, initial_points(model, surveys, hyper, config), config,
                           model.names(),
                           {model.path_preserving_moves(), model.path_kernels()});

  const auto& draws = res.draws;
  const std::size_t T = model.n_years();
  res.n_draws = draws.n_draws();
  res.n_chains = draws.n_chains();
  res.eta.resize(res.n_draws * T);
  const std::size_t n_sigma = model.emu_types().size();
  std::vector<std::vector<double>> log_sigma(n_sigma, std::vector<double>(res.n_draws));
  {
    CountryParams p;
    std::size_t k = 0;
    for (int c = 0; c < draws.n_chains(); ++c) {
      for (int i = 0; i < draws.n_samples(); ++i, ++k) {
        model.unpack_into(draws.draw(c, i), p);
        std::copy(p.eta.begin(), p.eta.end(), res.eta.begin() + static_cast<long>(k * T));
        for (std::size_t j = 0; j < n_sigma; ++j) log_sigma[j][k] = p.log_sigma[j];
      }
    }
  }

  std::vector<double> rho(res.n_draws), prev(res.n_draws), drho(res.n_draws);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < res.n_draws; ++k) rho[k] = inverse_logit(res.eta_draw(k, t));
    YearSummary ys;
    ys.year = years.start + static_cast<int>(t);
    ys.rho = summarize(rho);
    if (t > 0) {
      for (std::size_t k = 0; k < res.n_draws; ++k) drho[k] = rho[k] - prev[k];
      ys.drho = summarize(drho);
    }
    res.per_year.push_back(ys);
    prev.swap(rho);
    rho.resize(res.n_draws);
  }

  for (std::size_t j = 0; j < n_sigma; ++j) {
    SigmaSummary s;
    s.data_type = model.emu_types()[j];
    s.n_rates = static_cast<int>(std::count_if(emu_rates.begin(), emu_rates.end(),
                                               [&](const auto& e) { return e.data_type == s.data_type; }));
    std::vector<double> sig(log_sigma[j].size());
    std::transform(log_sigma[j].begin(), log_sigma[j].end(), sig.begin(),
                   [](double v) { return std::exp(v); });
    s.sigma = summarize(sig);
    s.log_sigma_mean = mean(log_sigma[j]);
    s.log_sigma_sd = sample_sd(log_sigma[j]);
    res.sigma.push_back(s);
  }

  // Convergence on eta at years that carry data.
  std::set<std::size_t> data_years;
  for (const auto& s : surveys) {
    data_years.insert(static_cast<std::size_t>(std::floor(s.year - years.start)));
  }
  if (model_mode == FitMode::SurveyEmu) {
    for (const auto& e : emu_rates) data_years.insert(static_cast<std::size_t>(e.year - years.start));
  }
  double worst = 1.0;
  double min_ess = std::numeric_limits<double>::infinity();
  for (auto t : data_years) {
    mcmc::Chains ch(draws.n_chains(), std::vector<double>(draws.n_samples()));
    for (int c = 0; c < draws.n_chains(); ++c) {
      for (int i = 0; i < draws.n_samples(); ++i) {
        ch[c][i] = res.eta_draw(static_cast<std::size_t>(c) * draws.n_samples() + i, t);
      }
    }
    if (draws.n_chains() >= 2 && draws.n_samples() >= 4) {
      worst = std::max(worst, mcmc::rhat(ch).value);
    }
    if (draws.n_samples() >= 4) min_ess = std::min(min_ess, mcmc::ess(ch).value);
  }
  res.max_rhat = worst;
  res.min_ess = std::isfinite(min_ess) ? min_ess : 0.0;
  double acc = 0.0, block = 0.0;
  for (int c = 0; c < draws.n_chains(); ++c) {
    for (std::size_t p = 0; p < draws.n_params(); ++p) acc += draws.acceptance(c, p);
    block += draws.block_acceptance(c);
  }
  res.mean_acceptance = acc / static_cast<double>(draws.n_chains() * draws.n_params());
  res.block_acceptance = block / draws.n_chains();

  if (worst > 1.1) {
    res.converged = false;
    std::ostringstream msg;
    msg << res.country_id << ' ' << label(res.group) << ' ' << label(mode)
        << ": max R-hat on eta at data years = " << worst;
    if (options.abort_on_nonconvergence) {
      throw ConvergenceError("country fit did not converge: " + msg.str());
    }
    res.warnings.push_back("not converged: " + msg.str());
  } else if (worst > 1.05) {
    res.converged = false;
    std::ostringstream msg;
    msg << "convergence warning: max R-hat on eta at data years = " << worst;
    res.warnings.push_back(msg.str());
  }
  return res;
}

}  // namespace fpemu::country
