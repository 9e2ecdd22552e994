#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "fpemu/mcmc.hpp"

using namespace fpemu;
using namespace fpemu::mcmc;

namespace {

std::vector<std::vector<double>> spread_inits(std::size_t dim, int chains, double spread) {
  std::vector<std::vector<double>> inits;
  for (int c = 0; c < chains; ++c) {
    std::vector<double> x(dim);
    for (std::size_t p = 0; p < dim; ++p) {
      x[p] = spread * (c - 1.5) + 0.1 * static_cast<double>(p);
    }
    inits.push_back(x);
  }
  return inits;
}

double sd_of(const std::vector<double>& xs) { return sample_sd(xs); }

}  // namespace

TEST(Sampler, StandardNormal) {
  auto lp = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  SamplerConfig cfg;
  cfg.seed = 1;
  auto draws = sample(lp, spread_inits(1, 4, 1.5), cfg);
  ASSERT_EQ(draws.n_draws(), 8000u);
  const auto xs = draws.flat(0);
  EXPECT_NEAR(mean(xs), 0.0, 0.05);
  EXPECT_NEAR(sd_of(xs), 1.0, 0.05);
  EXPECT_LT(draws.rhat()[0].value, 1.05);
  for (int c = 0; c < 4; ++c) {
    EXPECT_GT(draws.acceptance(c, 0), 0.15);
    EXPECT_LT(draws.acceptance(c, 0), 0.7);
  }
}

// Normal mean with known data SD and a normal prior.
TEST(Sampler, ConjugateNormalNormal) {
  const std::vector<double> y = {2.9, 3.4, 3.1, 2.5, 3.8, 3.3, 2.7, 3.0};
  const double sigma = 0.8, prior_mean = 1.0, prior_sd = 2.0;
  double sum = 0.0;
  for (double v : y) sum += v;
  const double prec = 1.0 / (prior_sd * prior_sd) + y.size() / (sigma * sigma);
  const double post_mean = (prior_mean / (prior_sd * prior_sd) + sum / (sigma * sigma)) / prec;
  const double post_sd = std::sqrt(1.0 / prec);

  auto lp = [&](std::span<const double> x) {
    double s = normal_logpdf(x[0], prior_mean, prior_sd);
    for (double v : y) s += normal_logpdf(v, x[0], sigma);
    return s;
  };
  SamplerConfig cfg;
  cfg.seed = 99;
  const auto t0 = std::chrono::steady_clock::now();
  auto draws = sample(lp, spread_inits(1, 4, 2.0), cfg);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto xs = draws.flat(0);
  EXPECT_NEAR(mean(xs), post_mean, 0.02 * post_mean);
  EXPECT_NEAR(sd_of(xs), post_sd, 0.02 * post_sd);
  EXPECT_LT(secs, 10.0);
}

TEST(Sampler, Deterministic) {
  auto lp = [](std::span<const double> x) {
    return -0.5 * (x[0] * x[0] + (x[1] - 1.0) * (x[1] - 1.0) / 4.0);
  };
  SamplerConfig cfg;
  cfg.n_warmup = 500;
  cfg.n_samples = 500;
  cfg.seed = 42;
  auto a = sample(lp, spread_inits(2, 4, 1.0), cfg);
  auto b = sample(lp, spread_inits(2, 4, 1.0), cfg);
  cfg.parallel_chains = false;
  auto c = sample(lp, spread_inits(2, 4, 1.0), cfg);
  for (int ch = 0; ch < 4; ++ch) {
    for (int i = 0; i < 500; ++i) {
      for (std::size_t p = 0; p < 2; ++p) {
        ASSERT_EQ(a.at(ch, i, p), b.at(ch, i, p));
        ASSERT_EQ(a.at(ch, i, p), c.at(ch, i, p));
      }
    }
  }
  cfg.seed = 43;
  auto d = sample(lp, spread_inits(2, 4, 1.0), cfg);
  EXPECT_NE(a.at(0, 10, 0), d.at(0, 10, 0));
}

// Correlated Gaussian targets in 1-5 dimensions: posterior means within
// 3 Monte Carlo standard errors, acceptance in range, finite stored lp.
TEST(Sampler, CorrelatedGaussians) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int dim = 1; dim <= 5; ++dim) {
    Eigen::MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) a(i, j) = n01(rng);
    Eigen::MatrixXd cov = a * a.transpose() + 0.3 * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::MatrixXd prec = cov.inverse();
    Eigen::VectorXd mu(dim);
    for (int i = 0; i < dim; ++i) mu[i] = 2.0 * n01(rng);

    auto lp = [&](std::span<const double> x) {
      Eigen::Map<const Eigen::VectorXd> v(x.data(), dim);
      const Eigen::VectorXd d = v - mu;
      return -0.5 * d.dot(prec * d);
    };
    SamplerConfig cfg;
    cfg.seed = 100 + dim;
    auto draws = sample(lp, spread_inits(dim, 4, 1.0), cfg);
    for (int p = 0; p < dim; ++p) {
      const double m = mean(draws.flat(p));
      EXPECT_LT(std::abs(m - mu[p]), 3.0 * mcse_mean(draws, p))
          << "dim " << dim << " param " << p;
      for (int c = 0; c < 4; ++c) {
        EXPECT_GE(draws.acceptance(c, p), 0.15);
        EXPECT_LE(draws.acceptance(c, p), 0.7);
      }
    }
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < draws.n_samples(); ++i) {
        ASSERT_TRUE(std::isfinite(draws.log_post(c, i)));
      }
    }
  }
}

TEST(Sampler, NonFiniteInitRejected) {
  auto lp = [](std::span<const double> x) {
    return x[0] > 0.0 ? -x[0] : kNegInf;
  };
  SamplerConfig cfg;
  cfg.n_chains = 2;
  std::vector<std::vector<double>> inits = {{1.0}, {-1.0}};
  try {
    sample(lp, inits, cfg);
    FAIL() << "expected an initialization error";
  } catch (const SamplerError& e) {
    EXPECT_EQ(e.kind(), SamplerError::Kind::Initialization);
  }
}

TEST(Sampler, IdenticalInitsRejected) {
  auto lp = [](std::span<const double> x) { return -x[0] * x[0]; };
  SamplerConfig cfg;
  cfg.n_chains = 2;
  EXPECT_THROW(sample(lp, {{0.5}, {0.5}}, cfg), std::invalid_argument);
}

TEST(Sampler, DivergenceWhenEverythingRejected) {
  auto lp = [](std::span<const double> x) { return x[0] == 0.25 ? 0.0 : kNegInf; };
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_warmup = 20000;
  cfg.n_samples = 10;
  try {
    sample(lp, {{0.25}}, cfg);
    FAIL() << "expected a divergence error";
  } catch (const SamplerError& e) {
    EXPECT_EQ(e.kind(), SamplerError::Kind::Divergence);
  }
}

TEST(Sampler, DrawCsv) {
  auto lp = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.n_warmup = 50;
  cfg.n_samples = 3;
  auto draws = sample(lp, {{0.1}, {-0.1}}, cfg, {"mu"});
  const std::string path = ::testing::TempDir() + "draws.csv";
  draws.write_csv(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "chain,iteration,parameter,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

// ---------------------------------------------------------------------------

namespace {
std::vector<double> normal_seq(std::uint64_t seed, std::size_t n, double mu = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mu, 1.0);
  std::vector<double> out(n);
  for (auto& x : out) x = d(rng);
  return out;
}
}  // namespace

TEST(Rhat, IdenticalChainsNearOne) {
  auto x = normal_seq(1, 1000);
  auto r = rhat({x, x});
  EXPECT_FALSE(r.degenerate);
  EXPECT_NEAR(r.value, 1.0, 0.01);
}

TEST(Rhat, ConstantChainsFlagged) {
  auto r = rhat({std::vector<double>(10, 2.0), std::vector<double>(10, 2.0)});
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
}

TEST(Rhat, SeparatedChains) {
  auto r = rhat({normal_seq(2, 500, 0.0), normal_seq(3, 500, 10.0)});
  EXPECT_GT(r.value, 2.0);
}

TEST(Rhat, WellMixed) {
  auto r = rhat({normal_seq(4, 1000), normal_seq(5, 1000), normal_seq(6, 1000),
                 normal_seq(7, 1000)});
  EXPECT_LT(r.value, 1.02);
}

TEST(Rhat, Preconditions) {
  EXPECT_THROW(rhat({normal_seq(1, 100)}), std::invalid_argument);
  EXPECT_THROW(rhat({{1.0, 2.0}, {1.0, 3.0}}), std::invalid_argument);
}

TEST(Ess, IndependentDraws) {
  auto e = ess({normal_seq(11, 1000), normal_seq(12, 1000), normal_seq(13, 1000),
                normal_seq(14, 1000)});
  EXPECT_GE(e.value, 3200.0);
  EXPECT_LE(e.value, 4800.0);
}

TEST(Ess, ConstantFlagged) {
  auto e = ess({std::vector<double>(100, 1.0)});
  EXPECT_TRUE(e.degenerate);
}

TEST(Ess, Ar1MatchesAnalytic) {
  const double phi = 0.9;
  const std::size_t n = 20000;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> d;
  std::vector<double> x(n);
  x[0] = d(rng) / std::sqrt(1 - phi * phi);
  for (std::size_t i = 1; i < n; ++i) x[i] = phi * x[i - 1] + d(rng);
  const double expected = n * (1 - phi) / (1 + phi);
  auto e = ess({x});
  EXPECT_NEAR(e.value, expected, 0.3 * expected);
}

// A scaling move with its Jacobian leaves the target unchanged.
TEST(Sampler, MovesPreserveTarget) {
  auto lp = [](std::span<const double> x) {
    return -0.5 * (x[0] * x[0] + (x[1] - 2.0) * (x[1] - 2.0) / 9.0);
  };
  Move scale = [](std::span<const double> x, double h, std::vector<double>& out) {
    out.assign(x.begin(), x.end());
    out[0] = x[0] * std::exp(h);
    out[1] = 2.0 + (x[1] - 2.0) * std::exp(h);
    return 2.0 * h;
  };
  Move shift = [](std::span<const double> x, double h, std::vector<double>& out) {
    out.assign(x.begin(), x.end());
    out[0] += h;
    out[1] += h;
    return 0.0;
  };
  SamplerConfig cfg;
  cfg.seed = 8;
  auto draws = sample(lp, spread_inits(2, 4, 1.0), cfg, {"a", "b"}, Updates{{scale, shift}, {}});
  EXPECT_NEAR(mean(draws.flat(0)), 0.0, 4.0 * mcse_mean(draws, 0));
  EXPECT_NEAR(mean(draws.flat(1)), 2.0, 4.0 * mcse_mean(draws, 1));
  EXPECT_NEAR(sd_of(draws.flat(0)), 1.0, 0.06);
  EXPECT_NEAR(sd_of(draws.flat(1)), 3.0, 0.18);
  for (int c = 0; c < 4; ++c) {
    ASSERT_EQ(draws.move_acceptance(c).size(), 2u);
    EXPECT_GT(draws.move_acceptance(c)[0], 0.2);
    EXPECT_GT(draws.move_acceptance(c)[1], 0.2);
  }
}
