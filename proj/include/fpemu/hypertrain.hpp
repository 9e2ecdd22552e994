#pragma once

// Multi-country training fit of the data-type variance hyperparameters.
//
// Each (country, data type) pair carries an extra standard deviation
// sigma_cd of EMU rates around mCPR rates:
//
//   dz* - drho* | sigma_cd   ~ N(0, s^2 + sigma_cd^2)
//   log sigma_cd | theta, tau ~ N(theta_d, tau^2)
//   theta_d ~ N(0, 2^2),  tau ~ half-Cauchy(0, 1)
//
// The sampler works on (theta, log tau, u) with log sigma_cd = theta_d +
// tau * u_cd; log_posterior_hyper is the density in (theta, log tau,
// log sigma) and the sampling density adds the Jacobian of that map.

#include <algorithm>
#include <array>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fpemu/core.hpp"
#include "fpemu/mcmc.hpp"

namespace fpemu::hyper {

inline constexpr double kThetaPriorSd = 2.0;
inline constexpr double kTauPriorScale = 1.0;

struct TrainingRecord {
  std::string country_id;
  DataType data_type = DataType::EmuClients;
  int year = 0;
  double dz_star = 0.0;
  double s = 0.0;
  double drho_star = 0.0;
};

// Survey-informed annual change in mCPR for one country and year.
struct McprEstimate {
  std::string country_id;
  int year = 0;
  double drho = 0.0;
};

struct TrainingSet {
  std::vector<TrainingRecord> records;
  std::map<std::pair<std::string, DataType>, int> counts;
  std::vector<std::string> warnings;
};

class JoinError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IdentifiabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Keeps EMU rates dated strictly before the country's most recent survey and
// joins each to the mCPR change for the same country and year.
inline TrainingSet build_training_set(
    const std::vector<EmuObservation>& emu_rates,
    const std::vector<McprEstimate>& mcpr_estimates,
    const std::map<std::string, double>& last_survey_year) {
  TrainingSet out;
  if (emu_rates.empty()) {
    out.warnings.push_back("no EMU rates supplied; training set is empty");
    return out;
  }
  std::map<std::pair<std::string, int>, double> drho;
  for (const auto& m : mcpr_estimates) drho[{m.country_id, m.year}] = m.drho;

  std::set<std::string> no_survey;
  std::vector<std::string> missing;
  for (const auto& e : emu_rates) {
    if (e.kind != EmuKind::Rate) {
      throw std::invalid_argument("build_training_set expects Rate observations");
    }
    auto last = last_survey_year.find(e.country_id);
    if (last == last_survey_year.end()) {
      no_survey.insert(e.country_id);
      continue;
    }
    if (!(e.year < last->second)) continue;
    auto it = drho.find({e.country_id, e.year});
    if (it == drho.end()) {
      missing.push_back(e.country_id + ":" + std::to_string(e.year));
      continue;
    }
    out.records.push_back({e.country_id, e.data_type, e.year, e.value, e.sd, it->second});
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "no mCPR change available for EMU rate(s) at";
    for (const auto& m : missing) msg << ' ' << m;
    throw JoinError(msg.str());
  }
  for (const auto& c : no_survey) {
    out.warnings.push_back("country " + c + " has no survey year; its EMU rates were dropped");
  }
  std::sort(out.records.begin(), out.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.country_id, a.data_type, a.year) <
           std::tie(b.country_id, b.data_type, b.year);
  });
  for (const auto& r : out.records) ++out.counts[{r.country_id, r.data_type}];
  if (out.records.empty()) out.warnings.push_back("training set is empty after filtering");
  return out;
}

// ---------------------------------------------------------------------------
// Model

struct Pair {
  std::string country_id;
  DataType data_type = DataType::EmuClients;
  auto operator<=>(const Pair&) const = default;
};

// Training records indexed by (country, type) pair. Extra pairs with no
// records can be requested to obtain posterior draws for a new pair.
class HyperModel {
 public:
  explicit HyperModel(std::vector<TrainingRecord> records,
                      std::vector<Pair> extra_pairs = {})
      : records_(std::move(records)) {
    std::set<Pair> seen;
    for (const auto& r : records_) {
      if (!(r.s >= 0.0)) throw std::invalid_argument("training record with negative s");
      seen.insert({r.country_id, r.data_type});
    }
    pairs_.assign(seen.begin(), seen.end());
    n_observed_pairs_ = pairs_.size();
    for (auto& p : extra_pairs) {
      if (seen.count(p)) throw std::invalid_argument("extra pair already has records");
      pairs_.push_back(p);
    }
    for (const auto& r : records_) {
      auto it = std::lower_bound(pairs_.begin(), pairs_.begin() + n_observed_pairs_,
                                 Pair{r.country_id, r.data_type});
      record_pair_.push_back(static_cast<std::size_t>(it - pairs_.begin()));
      resid_.push_back(r.dz_star - r.drho_star);
      s2_.push_back(r.s * r.s);
      ++n_obs_[index(r.data_type)];
    }
  }

  const std::vector<TrainingRecord>& records() const { return records_; }
  const std::vector<Pair>& pairs() const { return pairs_; }
  std::size_t n_observed_pairs() const { return n_observed_pairs_; }
  const std::array<int, 4>& n_obs() const { return n_obs_; }
  std::size_t record_pair(std::size_t i) const { return record_pair_[i]; }
  double residual(std::size_t i) const { return resid_[i]; }
  double s2(std::size_t i) const { return s2_[i]; }

  // Sampling-space layout: theta_1..4, log tau, u per pair.
  std::size_t dim() const { return 5 + pairs_.size(); }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (auto d : kAllDataTypes) out.push_back("theta[" + std::to_string(code(d)) + "]");
    out.push_back("log_tau");
    for (const auto& p : pairs_) {
      out.push_back("u[" + p.country_id + "," + std::to_string(code(p.data_type)) + "]");
    }
    return out;
  }

  // Moves of theta_d and log tau that hold every log sigma fixed.
  std::vector<mcmc::Move> centered_moves() const {
    std::vector<mcmc::Move> out;
    for (auto d : kAllDataTypes) {
      std::vector<std::size_t> slots;
      for (std::size_t k = 0; k < pairs_.size(); ++k) {
        if (pairs_[k].data_type == d) slots.push_back(5 + k);
      }
      if (slots.empty()) continue;
      const std::size_t i = index(d);
      out.push_back([i, slots](std::span<const double> x, double h, std::vector<double>& y) {
        y.assign(x.begin(), x.end());
        y[i] = x[i] + h;
        const double step = h / std::exp(x[4]);
        for (auto s : slots) y[s] = x[s] - step;
        return 0.0;
      });
    }
    const std::size_t n_pairs = pairs_.size();
    out.push_back([n_pairs](std::span<const double> x, double h, std::vector<double>& y) {
      y.assign(x.begin(), x.end());
      y[4] = x[4] + h;
      const double f = std::exp(-h);
      for (std::size_t k = 0; k < n_pairs; ++k) y[5 + k] = x[5 + k] * f;
      return -h * static_cast<double>(n_pairs);
    });
    return out;
  }

 private:
  std::vector<TrainingRecord> records_;
  std::vector<Pair> pairs_;
  std::size_t n_observed_pairs_ = 0;
  std::vector<std::size_t> record_pair_;
  std::vector<double> resid_;
  std::vector<double> s2_;
  std::array<int, 4> n_obs_{};
};

struct HyperParams {
  std::array<double, 4> theta{};
  double log_tau = 0.0;
  std::vector<double> log_sigma;  // one per model pair
};

// Log posterior in (theta, log tau, log sigma), including the log-tau
// Jacobian. Returns -inf outside the support.
inline double log_posterior_hyper(const HyperParams& p, const HyperModel& model) {
  if (p.log_sigma.size() != model.pairs().size()) {
    throw std::invalid_argument("log_posterior_hyper: one log sigma per pair required");
  }
  const double tau = std::exp(p.log_tau);
  if (!(tau > 0.0) || !std::isfinite(tau)) return kNegInf;

  std::vector<double> sigma2(p.log_sigma.size());
  for (std::size_t k = 0; k < sigma2.size(); ++k) sigma2[k] = std::exp(2.0 * p.log_sigma[k]);

  double lp = 0.0;
  for (std::size_t i = 0; i < model.records().size(); ++i) {
    const double var = model.s2(i) + sigma2[model.record_pair(i)];
    if (!(var > 0.0) || !std::isfinite(var)) return kNegInf;
    const double r = model.residual(i);
    lp += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * r * r / var;
  }
  for (std::size_t k = 0; k < model.pairs().size(); ++k) {
    lp += normal_logpdf(p.log_sigma[k], p.theta[index(model.pairs()[k].data_type)], tau);
  }
  for (double th : p.theta) lp += normal_logpdf(th, 0.0, kThetaPriorSd);
  lp += half_cauchy_logpdf(tau, kTauPriorScale) + p.log_tau;
  return std::isnan(lp) ? kNegInf : lp;
}

inline HyperParams unpack(std::span<const double> x, const HyperModel& model) {
  HyperParams p;
  for (std::size_t d = 0; d < 4; ++d) p.theta[d] = x[d];
  p.log_tau = x[4];
  const double tau = std::exp(p.log_tau);
  p.log_sigma.resize(model.pairs().size());
  for (std::size_t k = 0; k < model.pairs().size(); ++k) {
    p.log_sigma[k] = p.theta[index(model.pairs()[k].data_type)] + tau * x[5 + k];
  }
  return p;
}

// Density on the sampler's (theta, log tau, u) coordinates.
inline double sampling_log_density(std::span<const double> x, const HyperModel& model) {
  const auto p = unpack(x, model);
  const double lp = log_posterior_hyper(p, model);
  if (!std::isfinite(lp)) return kNegInf;
  return lp + static_cast<double>(model.pairs().size()) * p.log_tau;
}

// ---------------------------------------------------------------------------
// Fit

struct FitOptions {
  std::vector<Pair> extra_pairs;
  bool abort_on_nonconvergence = true;
};

struct HyperFit {
  HyperEstimates estimates;
  mcmc::PosteriorDraws draws;  // sampler coordinates
  std::vector<Pair> pairs;
  // Derived draws, chain-major: theta per type, tau, log sigma per pair.
  std::array<std::vector<double>, 4> theta;
  std::vector<double> tau;
  std::vector<std::vector<double>> log_sigma;
  std::array<double, 4> theta_rhat{};
  double tau_rhat = 1.0;
  std::vector<std::string> warnings;
  bool converged = true;
};

inline std::vector<std::vector<double>> initial_points(const HyperModel& model,
                                                       const mcmc::SamplerConfig& cfg) {
  // Moment-based starting theta per type.
  std::array<double, 4> sum_r2{}, sum_s2{};
  std::array<int, 4> n{};
  for (std::size_t i = 0; i < model.records().size(); ++i) {
    const auto d = index(model.records()[i].data_type);
    sum_r2[d] += model.residual(i) * model.residual(i);
    sum_s2[d] += model.s2(i);
    ++n[d];
  }
  std::array<double, 4> theta0{};
  for (std::size_t d = 0; d < 4; ++d) {
    if (n[d] == 0) {
      theta0[d] = -3.0;
      continue;
    }
    const double excess = (sum_r2[d] - sum_s2[d]) / n[d];
    theta0[d] = 0.5 * std::log(std::max(excess, 1e-4));
  }
  std::vector<std::vector<double>> inits;
  for (int c = 0; c < cfg.n_chains; ++c) {
    auto rng = mcmc::detail::substream(cfg.seed, c, 1u << 20);
    std::normal_distribution<double> z;
    std::vector<double> x(model.dim());
    for (std::size_t d = 0; d < 4; ++d) x[d] = theta0[d] + 0.5 * z(rng);
    x[4] = std::log(0.5) + 0.5 * z(rng);
    for (std::size_t k = 0; k < model.pairs().size(); ++k) x[5 + k] = 0.5 * z(rng);
    inits.push_back(std::move(x));
  }
  return inits;
}

inline HyperFit fit_hyper(const std::vector<TrainingRecord>& records,
                          const mcmc::SamplerConfig& config,
                          const FitOptions& options = {}) {
  HyperModel model(records, options.extra_pairs);
  if (model.n_observed_pairs() < 2) {
    throw IdentifiabilityError(
        "hyperparameter fit needs records for at least two distinct (country, data "
        "type) pairs; tau is not identified otherwise");
  }

  auto target = [&model](std::span<const double> x) {
    return sampling_log_density(x, model);
  };
  HyperFit fit;
  fit.draws = mcmc::sample(target, initial_points(model, config), config, model.names(),
                           {model.centered_moves(), {}});
  fit.pairs = model.pairs();

  const auto& draws = fit.draws;
  const std::size_t n = draws.n_draws();
  for (auto& t : fit.theta) t.reserve(n);
  fit.tau.reserve(n);
  fit.log_sigma.assign(model.pairs().size(), {});
  for (int c = 0; c < draws.n_chains(); ++c) {
    for (int i = 0; i < draws.n_samples(); ++i) {
      const auto p = unpack(draws.draw(c, i), model);
      for (std::size_t d = 0; d < 4; ++d) fit.theta[d].push_back(p.theta[d]);
      fit.tau.push_back(std::exp(p.log_tau));
      for (std::size_t k = 0; k < p.log_sigma.size(); ++k) {
        fit.log_sigma[k].push_back(p.log_sigma[k]);
      }
    }
  }

  auto by_chain = [&](const std::vector<double>& flat) {
    mcmc::Chains out(draws.n_chains());
    for (int c = 0; c < draws.n_chains(); ++c) {
      out[c].assign(flat.begin() + static_cast<long>(c) * draws.n_samples(),
                    flat.begin() + static_cast<long>(c + 1) * draws.n_samples());
    }
    return out;
  };

  double worst = 1.0;
  if (draws.n_chains() >= 2) {
    for (std::size_t d = 0; d < 4; ++d) {
      fit.theta_rhat[d] = mcmc::rhat(by_chain(fit.theta[d])).value;
      worst = std::max(worst, fit.theta_rhat[d]);
    }
    fit.tau_rhat = mcmc::rhat(by_chain(fit.tau)).value;
    worst = std::max(worst, fit.tau_rhat);
  }

  for (auto d : kAllDataTypes) {
    const auto& th = fit.theta[index(d)];
    std::vector<double> ex(th.size());
    std::transform(th.begin(), th.end(), ex.begin(), [](double v) { return std::exp(v); });
    auto& est = fit.estimates[d];
    est.theta_hat = quantile(th, 0.5);
    est.theta_sd = sample_sd(th);
    est.ci_low = quantile(ex, 0.025);
    est.ci_high = quantile(ex, 0.975);
    est.n_obs = model.n_obs()[index(d)];
    est.from_prior = est.n_obs == 0;
    if (est.from_prior) {
      fit.warnings.push_back(std::string(label(d)) +
                             ": no training records, estimate reflects the prior only");
    }
  }
  fit.estimates.tau_hat = quantile(fit.tau, 0.5);

  std::ostringstream diag;
  diag.precision(4);
  diag << "R-hat theta = (";
  for (std::size_t d = 0; d < 4; ++d) diag << (d ? ", " : "") << fit.theta_rhat[d];
  diag << "), R-hat tau = " << fit.tau_rhat;
  if (worst > 1.1) {
    fit.converged = false;
    if (options.abort_on_nonconvergence) {
      throw ConvergenceError("hyperparameter fit did not converge: " + diag.str());
    }
    fit.warnings.push_back("not converged: " + diag.str());
  } else if (worst > 1.05) {
    fit.converged = false;
    fit.warnings.push_back("convergence warning: " + diag.str());
  }
  return fit;
}

}  // namespace fpemu::hyper
