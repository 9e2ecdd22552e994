#pragma once

// Adaptive random-walk Metropolis-within-Gibbs with an optional joint
// proposal learned during warmup, plus split-R-hat and ESS diagnostics.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fpemu/core.hpp"

namespace fpemu::mcmc {

struct SamplerConfig {
  int n_chains = 4;
  int n_warmup = 2000;
  int n_samples = 2000;  // kept per chain
  std::uint64_t seed = 20240101;
  double target_accept = 0.44;  // per coordinate
  int adapt_window = 50;
  // Joint Gaussian proposal with covariance estimated in the second half of
  // warmup, applied once per iteration after the coordinate sweep.
  bool block_update = true;
  double block_target_accept = 0.234;
  bool parallel_chains = true;
  double initial_scale = 0.1;
};

inline void check(const SamplerConfig& c) {
  if (c.n_chains < 1 || c.n_warmup < 1 || c.n_samples < 1) {
    throw std::invalid_argument("sampler: n_chains, n_warmup and n_samples must be positive");
  }
  if (!(c.target_accept > 0.0 && c.target_accept < 1.0)) {
    throw std::invalid_argument("sampler: target_accept must lie in (0,1)");
  }
  if (c.adapt_window < 1) throw std::invalid_argument("sampler: adapt_window must be positive");
}

inline constexpr double kScaleFloor = 1e-8;
inline constexpr double kScaleCeiling = 1e2;

class SamplerError : public std::runtime_error {
 public:
  enum class Kind { Initialization, Divergence };
  SamplerError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// A deterministic move driven by a scalar step h: writes T(x, h) to `out`
// and returns log|det dT/dx|. T(T(x, h), -h) must equal x. Used to update a
// parameter while holding some function of the state fixed.
using Move = std::function<double(std::span<const double> x, double h,
                                  std::vector<double>& out)>;

// A stochastic proposal: writes x' to `out` and returns
// log q(x | x') - log q(x' | x) given the step h, where the reverse proposal
// uses step -h. With `adaptive` set, h ~ N(0, scale^2) and the scale is tuned
// during warmup like a coordinate step; otherwise h = 0.
struct Kernel {
  std::function<double(std::span<const double> x, double h, std::mt19937_64& rng,
                       std::vector<double>& out)>
      propose;
  bool adaptive = false;
};

// Model-specific updates run after the coordinate sweep.
struct Updates {
  std::vector<Move> moves;
  std::vector<Kernel> kernels;
};

struct Diagnostic {
  double value = 1.0;
  bool degenerate = false;
};

// ---------------------------------------------------------------------------
// Diagnostics

using Chains = std::vector<std::vector<double>>;

namespace detail {

inline void check_chains(const Chains& chains, std::size_t min_chains,
                         std::size_t min_len) {
  if (chains.size() < min_chains) {
    throw std::invalid_argument("diagnostic needs at least " +
                                std::to_string(min_chains) + " chains");
  }
  const auto n = chains.front().size();
  if (n < min_len) {
    throw std::invalid_argument("diagnostic needs at least " +
                                std::to_string(min_len) + " draws per chain");
  }
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("chains must have equal length");
  }
}

inline bool all_identical(const Chains& chains) {
  const double v = chains.front().front();
  for (const auto& c : chains) {
    for (double x : c) {
      if (x != v) return false;
    }
  }
  return true;
}

inline double chain_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double chain_var(std::span<const double> x, double m) {
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace detail

// Split potential scale reduction factor. Constant input returns 1.0 with
// the degenerate flag set.
inline Diagnostic rhat(const Chains& chains) {
  detail::check_chains(chains, 2, 4);
  if (detail::all_identical(chains)) return {1.0, true};

  const std::size_t half = chains.front().size() / 2;
  std::vector<std::span<const double>> pieces;
  for (const auto& c : chains) {
    std::span<const double> s(c);
    pieces.push_back(s.first(half));
    pieces.push_back(s.last(half));
  }
  const auto m = static_cast<double>(pieces.size());
  const auto n = static_cast<double>(half);
  std::vector<double> means;
  double w = 0.0;
  for (auto p : pieces) {
    const double mu = detail::chain_mean(p);
    means.push_back(mu);
    w += detail::chain_var(p, mu);
  }
  w /= m;
  const double grand = detail::chain_mean(means);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b = b * n / (m - 1.0);
  if (w <= 0.0) return {std::numeric_limits<double>::infinity(), true};
  const double var_plus = (n - 1.0) / n * w + b / n;
  return {std::sqrt(var_plus / w), false};
}

// Effective sample size from the multi-chain autocorrelation estimate,
// truncated with Geyer's initial monotone sequence.
inline Diagnostic ess(const Chains& chains) {
  detail::check_chains(chains, 1, 4);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  if (detail::all_identical(chains)) return {1.0, true};

  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = detail::chain_mean(chains[c]);
    vars[c] = detail::chain_var(chains[c], means[c]);
  }
  const double nd = static_cast<double>(n);
  const double mean_var = detail::chain_mean(vars);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += detail::chain_var(means, detail::chain_mean(means));
  if (var_plus <= 0.0) return {1.0, true};

  // Mean over chains of the biased autocovariance at lag t.
  auto acov = [&](std::size_t t) {
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const auto& x = chains[c];
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) {
        s += (x[i] - means[c]) * (x[i + t] - means[c]);
      }
      total += s / nd;
    }
    return total / static_cast<double>(m);
  };
  auto rho = [&](std::size_t t) {
    return 1.0 - (mean_var - acov(t)) / var_plus;
  };

  double sum = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  std::size_t t = 0;
  for (; t + 1 < n; t += 2) {
    const double r0 = (t == 0) ? 1.0 : rho(t);
    double pair = r0 + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(nd * m));
  return {static_cast<double>(m) * nd / tau, false};
}

// ---------------------------------------------------------------------------
// Draw container

class PosteriorDraws {
 public:
  PosteriorDraws() = default;
  PosteriorDraws(std::vector<std::string> names, int n_chains, int n_samples)
      : names_(std::move(names)),
        n_chains_(n_chains),
        n_samples_(n_samples),
        values_(static_cast<std::size_t>(n_chains) * n_samples * names_.size()),
        log_post_(static_cast<std::size_t>(n_chains) * n_samples),
        acceptance_(static_cast<std::size_t>(n_chains) * names_.size()),
        block_acceptance_(static_cast<std::size_t>(n_chains), 0.0),
        move_acceptance_(static_cast<std::size_t>(n_chains)) {}

  const std::vector<std::string>& names() const { return names_; }
  int n_chains() const { return n_chains_; }
  int n_samples() const { return n_samples_; }
  std::size_t n_params() const { return names_.size(); }
  std::size_t n_draws() const {
    return static_cast<std::size_t>(n_chains_) * n_samples_;
  }

  double& at(int chain, int iter, std::size_t param) {
    return values_[offset(chain, iter) * n_params() + param];
  }
  double at(int chain, int iter, std::size_t param) const {
    return values_[offset(chain, iter) * n_params() + param];
  }
  // Parameter vector of one stored draw.
  std::span<const double> draw(int chain, int iter) const {
    return {values_.data() + offset(chain, iter) * n_params(), n_params()};
  }
  double& log_post(int chain, int iter) { return log_post_[offset(chain, iter)]; }
  double log_post(int chain, int iter) const { return log_post_[offset(chain, iter)]; }

  double& acceptance(int chain, std::size_t param) {
    return acceptance_[static_cast<std::size_t>(chain) * n_params() + param];
  }
  double acceptance(int chain, std::size_t param) const {
    return acceptance_[static_cast<std::size_t>(chain) * n_params() + param];
  }
  double& block_acceptance(int chain) { return block_acceptance_[chain]; }
  // Post-warmup acceptance of each move, then each kernel.
  std::vector<double>& move_acceptance(int chain) { return move_acceptance_[chain]; }
  const std::vector<double>& move_acceptance(int chain) const { return move_acceptance_[chain]; }
  double block_acceptance(int chain) const { return block_acceptance_[chain]; }

  std::size_t index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::out_of_range("no parameter named " + name);
    return static_cast<std::size_t>(it - names_.begin());
  }

  Chains chains(std::size_t param) const {
    Chains out(n_chains_, std::vector<double>(n_samples_));
    for (int c = 0; c < n_chains_; ++c) {
      for (int i = 0; i < n_samples_; ++i) out[c][i] = at(c, i, param);
    }
    return out;
  }
  // All draws of one parameter, chain-major.
  std::vector<double> flat(std::size_t param) const {
    std::vector<double> out;
    out.reserve(n_draws());
    for (int c = 0; c < n_chains_; ++c) {
      for (int i = 0; i < n_samples_; ++i) out.push_back(at(c, i, param));
    }
    return out;
  }

  const std::vector<Diagnostic>& rhat() const { return rhat_; }
  const std::vector<Diagnostic>& ess() const { return ess_; }

  void compute_diagnostics() {
    rhat_.clear();
    ess_.clear();
    for (std::size_t p = 0; p < n_params(); ++p) {
      auto ch = chains(p);
      if (n_chains_ >= 2 && n_samples_ >= 4) {
        rhat_.push_back(fpemu::mcmc::rhat(ch));
      } else {
        rhat_.push_back({std::numeric_limits<double>::quiet_NaN(), true});
      }
      ess_.push_back(n_samples_ >= 4 ? fpemu::mcmc::ess(ch) : Diagnostic{1.0, true});
    }
  }

  // Long-format dump: chain, iteration, parameter, value.
  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(17);
    out << "chain,iteration,parameter,value\n";
    for (int c = 0; c < n_chains_; ++c) {
      for (int i = 0; i < n_samples_; ++i) {
        for (std::size_t p = 0; p < n_params(); ++p) {
          out << c << ',' << i << ',' << names_[p] << ',' << at(c, i, p) << '\n';
        }
      }
    }
  }

 private:
  std::size_t offset(int chain, int iter) const {
    return static_cast<std::size_t>(chain) * n_samples_ + iter;
  }

  std::vector<std::string> names_;
  int n_chains_ = 0;
  int n_samples_ = 0;
  std::vector<double> values_;
  std::vector<double> log_post_;
  std::vector<double> acceptance_;
  std::vector<double> block_acceptance_;
  std::vector<std::vector<double>> move_acceptance_;
  std::vector<Diagnostic> rhat_;
  std::vector<Diagnostic> ess_;
};

// ---------------------------------------------------------------------------
// Sampler

namespace detail {

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t chain,
                                 std::uint64_t slot) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain),
                    static_cast<std::uint32_t>(slot), 0x5eedu};
  return std::mt19937_64(seq);
}

// Running mean and covariance of the chain state (Welford).
struct RunningCov {
  explicit RunningCov(std::size_t d) : mean(Eigen::VectorXd::Zero(d)),
                                       m2(Eigen::MatrixXd::Zero(d, d)) {}
  void add(const std::vector<double>& x) {
    ++n;
    Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::VectorXd delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean).transpose();
  }
  Eigen::MatrixXd cov() const { return m2 / static_cast<double>(n - 1); }

  long n = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd m2;
};

template <class LogPosterior>
void run_chain(const LogPosterior& log_posterior, std::vector<double> x,
               const SamplerConfig& cfg, const Updates& updates, int chain,
               PosteriorDraws& out) {
  const std::size_t dim = x.size();
  const auto& moves = updates.moves;
  const auto& kernels = updates.kernels;
  std::vector<std::mt19937_64> rngs;
  rngs.reserve(dim + 1 + moves.size() + kernels.size());
  for (std::size_t p = 0; p <= dim + moves.size() + kernels.size(); ++p) {
    rngs.push_back(substream(cfg.seed, chain, p));
  }
  auto& block_rng = rngs[dim];
  std::vector<double> move_scale(moves.size() + kernels.size(), cfg.initial_scale);
  std::vector<int> move_window_accepts(moves.size() + kernels.size(), 0);
  std::vector<long> move_kept_accepts(moves.size() + kernels.size(), 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  double lp = log_posterior(std::span<const double>(x));
  if (!std::isfinite(lp)) {
    throw SamplerError(SamplerError::Kind::Initialization,
                       "log posterior is not finite at the initial point of chain " +
                           std::to_string(chain));
  }

  std::vector<double> scale(dim, cfg.initial_scale);
  std::vector<int> window_accepts(dim, 0);
  std::vector<long> kept_accepts(dim, 0);
  int window_index = 0;

  const bool use_block = cfg.block_update && dim >= 2;
  const int cov_start = cfg.n_warmup / 2;
  RunningCov running(dim);
  Eigen::MatrixXd chol;
  bool block_ready = false;
  double block_scale = 2.38 / std::sqrt(static_cast<double>(dim));
  int block_window_accepts = 0;
  int block_window_tries = 0;
  long block_kept_accepts = 0;
  std::vector<double> proposal(dim);
  Eigen::VectorXd z(static_cast<Eigen::Index>(dim));

  const int total = cfg.n_warmup + cfg.n_samples;
  for (int it = 0; it < total; ++it) {
    const bool warmup = it < cfg.n_warmup;

    for (std::size_t p = 0; p < dim; ++p) {
      auto& rng = rngs[p];
      const double step = scale[p] * normal(rng);
      const double log_u = std::log(unif(rng));
      const double old = x[p];
      x[p] = old + step;
      const double lp_new = log_posterior(std::span<const double>(x));
      if (std::isfinite(lp_new) && log_u < lp_new - lp) {
        lp = lp_new;
        if (warmup) {
          ++window_accepts[p];
        } else {
          ++kept_accepts[p];
        }
      } else {
        x[p] = old;
      }
    }

    for (std::size_t j = 0; j < moves.size(); ++j) {
      auto& rng = rngs[dim + 1 + j];
      const double h = move_scale[j] * normal(rng);
      const double log_u = std::log(unif(rng));
      const double log_jac = moves[j](std::span<const double>(x), h, proposal);
      const double lp_new = log_posterior(std::span<const double>(proposal));
      if (std::isfinite(lp_new) && std::isfinite(log_jac) && log_u < lp_new - lp + log_jac) {
        x.swap(proposal);
        lp = lp_new;
        if (warmup) {
          ++move_window_accepts[j];
        } else {
          ++move_kept_accepts[j];
        }
      }
    }

    for (std::size_t j = 0; j < kernels.size(); ++j) {
      const std::size_t slot = moves.size() + j;
      auto& rng = rngs[dim + 1 + slot];
      const double h = kernels[j].adaptive ? move_scale[slot] * normal(rng) : 0.0;
      const double log_ratio = kernels[j].propose(std::span<const double>(x), h, rng, proposal);
      const double log_u = std::log(unif(rng));
      const double lp_new = log_posterior(std::span<const double>(proposal));
      if (std::isfinite(lp_new) && std::isfinite(log_ratio) &&
          log_u < lp_new - lp + log_ratio) {
        x.swap(proposal);
        lp = lp_new;
        if (warmup) {
          ++move_window_accepts[slot];
        } else {
          ++move_kept_accepts[slot];
        }
      }
    }

    if (use_block && block_ready) {
      for (std::size_t p = 0; p < dim; ++p) z[static_cast<Eigen::Index>(p)] = normal(block_rng);
      const double log_u = std::log(unif(block_rng));
      const Eigen::VectorXd step = block_scale * (chol * z);
      for (std::size_t p = 0; p < dim; ++p) {
        proposal[p] = x[p] + step[static_cast<Eigen::Index>(p)];
      }
      const double lp_new = log_posterior(std::span<const double>(proposal));
      const bool accept = std::isfinite(lp_new) && log_u < lp_new - lp;
      if (accept) {
        x.swap(proposal);
        lp = lp_new;
      }
      if (warmup) {
        ++block_window_tries;
        block_window_accepts += accept ? 1 : 0;
      } else {
        block_kept_accepts += accept ? 1 : 0;
      }
    }

    if (warmup) {
      if (use_block && it >= cov_start) running.add(x);

      if ((it + 1) % cfg.adapt_window == 0) {
        ++window_index;
        const double gain = std::min(1.0, 2.0 / std::sqrt(static_cast<double>(window_index)));
        for (std::size_t p = 0; p < dim; ++p) {
          const double rate =
              static_cast<double>(window_accepts[p]) / cfg.adapt_window;
          if (window_accepts[p] == 0 && scale[p] <= kScaleFloor) {
            throw SamplerError(SamplerError::Kind::Divergence,
                               "chain " + std::to_string(chain) + ": coordinate " +
                                   std::to_string(p) +
                                   " rejected every proposal at the minimum step size");
          }
          scale[p] = std::clamp(scale[p] * std::exp(gain * (rate - cfg.target_accept)),
                                kScaleFloor, kScaleCeiling);
          window_accepts[p] = 0;
        }
        for (std::size_t j = 0; j < move_scale.size(); ++j) {
          const double rate = static_cast<double>(move_window_accepts[j]) / cfg.adapt_window;
          move_scale[j] = std::clamp(move_scale[j] * std::exp(gain * (rate - cfg.target_accept)),
                                     kScaleFloor, kScaleCeiling);
          move_window_accepts[j] = 0;
        }
        if (use_block && block_window_tries > 0) {
          const double rate = static_cast<double>(block_window_accepts) / block_window_tries;
          block_scale = std::clamp(
              block_scale * std::exp(gain * (rate - cfg.block_target_accept)), kScaleFloor,
              kScaleCeiling);
          block_window_accepts = 0;
          block_window_tries = 0;
        }
        // Refresh the joint proposal from the states seen so far.
        if (use_block && running.n >= 4 * cfg.adapt_window &&
            window_index % 4 == 0) {
          Eigen::MatrixXd cov = running.cov();
          cov.diagonal().array() += 1e-10;
          Eigen::LLT<Eigen::MatrixXd> llt(cov);
          if (llt.info() == Eigen::Success) {
            chol = llt.matrixL();
            block_ready = true;
          }
        }
      }
    } else {
      const int k = it - cfg.n_warmup;
      for (std::size_t p = 0; p < dim; ++p) out.at(chain, k, p) = x[p];
      out.log_post(chain, k) = lp;
    }
  }

  for (std::size_t p = 0; p < dim; ++p) {
    out.acceptance(chain, p) = static_cast<double>(kept_accepts[p]) / cfg.n_samples;
  }
  auto& macc = out.move_acceptance(chain);
  macc.resize(move_kept_accepts.size());
  for (std::size_t j = 0; j < macc.size(); ++j) {
    macc[j] = static_cast<double>(move_kept_accepts[j]) / cfg.n_samples;
  }
  out.block_acceptance(chain) =
      block_ready ? static_cast<double>(block_kept_accepts) / cfg.n_samples : 0.0;
}

}  // namespace detail

// Draws from exp(log_posterior). Each iteration runs one random-walk update per
// coordinate, then each extra move and kernel, then the joint proposal once
// it has been estimated. One init per chain; chain c uses RNG substreams derived from
// (seed, c, slot) only, so results do not depend on thread scheduling.
template <class LogPosterior>
PosteriorDraws sample(const LogPosterior& log_posterior,
                      const std::vector<std::vector<double>>& inits,
                      const SamplerConfig& config,
                      std::vector<std::string> names = {},
                      const Updates& updates = {}) {
  check(config);
  if (static_cast<int>(inits.size()) != config.n_chains) {
    throw std::invalid_argument("sampler: need exactly one init per chain");
  }
  const std::size_t dim = inits.front().size();
  if (dim == 0) throw std::invalid_argument("sampler: empty parameter vector");
  for (std::size_t i = 0; i < inits.size(); ++i) {
    if (inits[i].size() != dim) throw std::invalid_argument("sampler: init sizes differ");
    for (std::size_t j = 0; j < i; ++j) {
      if (inits[i] == inits[j]) {
        throw std::invalid_argument("sampler: chain inits must be distinct");
      }
    }
  }
  if (names.empty()) {
    for (std::size_t p = 0; p < dim; ++p) names.push_back("x" + std::to_string(p));
  }
  if (names.size() != dim) throw std::invalid_argument("sampler: names/init size mismatch");

  PosteriorDraws out(std::move(names), config.n_chains, config.n_samples);
  std::vector<std::exception_ptr> errors(config.n_chains);
  auto run = [&](int c) {
    try {
      detail::run_chain(log_posterior, inits[c], config, updates, c, out);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel_chains && config.n_chains > 1) {
    std::vector<std::thread> threads;
    for (int c = 0; c < config.n_chains; ++c) threads.emplace_back(run, c);
    for (auto& t : threads) t.join();
  } else {
    for (int c = 0; c < config.n_chains; ++c) run(c);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  out.compute_diagnostics();
  return out;
}

// Monte Carlo standard error of a posterior mean.
inline double mcse_mean(const PosteriorDraws& draws, std::size_t param) {
  const auto xs = draws.flat(param);
  const double e = draws.ess()[param].value;
  return sample_sd(xs) / std::sqrt(e);
}

}  // namespace fpemu::mcmc
