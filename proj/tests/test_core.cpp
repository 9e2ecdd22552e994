#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fpemu/core.hpp"

using namespace fpemu;

TEST(Logit, KnownValues) {
  EXPECT_DOUBLE_EQ(logit(0.5), 0.0);
  EXPECT_NEAR(logit(0.25), std::log(1.0 / 3.0), 1e-15);
  EXPECT_NEAR(logit(0.25), -1.0986123, 1e-7);
  EXPECT_NEAR(inverse_logit(logit(0.731)), 0.731, 1e-12);
}

TEST(Logit, RejectsBoundary) {
  EXPECT_THROW(logit(0.0), std::domain_error);
  EXPECT_THROW(logit(1.0), std::domain_error);
  EXPECT_THROW(logit(-0.2), std::domain_error);
}

TEST(Logit, RoundTripProperty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng);
    ASSERT_NEAR(inverse_logit(logit(p)), p, 1e-12) << p;
  }
  // inverse_logit must not overflow for large arguments.
  EXPECT_DOUBLE_EQ(inverse_logit(800.0), 1.0);
  EXPECT_DOUBLE_EQ(inverse_logit(-800.0), 0.0);
}

TEST(DeltaMethod, ClosedForm) {
  EXPECT_NEAR(delta_method_se(0.5, 0.01), 0.04, 1e-15);
  EXPECT_NEAR(delta_method_se(0.2, 0.016), 0.1, 1e-15);
  EXPECT_THROW(delta_method_se(0.5, 0.0), std::domain_error);
  EXPECT_THROW(delta_method_se(1.0, 0.01), std::domain_error);
}

TEST(CombinedSd, Values) {
  EXPECT_DOUBLE_EQ(combined_sd(0.02, 0.0), 0.02);
  EXPECT_DOUBLE_EQ(combined_sd(0.0, 0.0), 0.0);
  EXPECT_NEAR(combined_sd(0.02, 0.01), std::sqrt(0.0005), 1e-15);
  EXPECT_NEAR(combined_sd(0.02, 0.01), 0.0223607, 1e-7);
  EXPECT_THROW(combined_sd(-0.1, 0.0), std::domain_error);
}

TEST(CombinedSd, SymmetricAndMonotone) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng), b = u(rng), db = u(rng);
    ASSERT_DOUBLE_EQ(combined_sd(a, b), combined_sd(b, a));
    ASSERT_DOUBLE_EQ(combined_sd(a, 0.0), a);
    ASSERT_LE(combined_sd(a, b), combined_sd(a, b + db));
  }
}

TEST(HalfCauchy, ClosedForm) {
  EXPECT_NEAR(half_cauchy_logpdf(0.0, 1.0), std::log(2.0 / std::numbers::pi), 1e-14);
  EXPECT_NEAR(half_cauchy_logpdf(0.0, 1.0), -0.45158, 1e-5);
  EXPECT_NEAR(half_cauchy_logpdf(1.0, 1.0), std::log(1.0 / std::numbers::pi), 1e-14);
  EXPECT_NEAR(half_cauchy_logpdf(1.0, 1.0), -1.14473, 1e-5);
  EXPECT_EQ(half_cauchy_logpdf(-0.1, 1.0), kNegInf);
}

// Composite Simpson on t in [0,1) after x = scale * t / (1 - t).
TEST(HalfCauchy, IntegratesToOne) {
  for (double scale : {0.05, 1.0, 3.0}) {
    const int n = 200000;
    const double h = 1.0 / n;
    auto f = [&](double t) {
      if (t >= 1.0) return 0.0;
      const double x = scale * t / (1.0 - t);
      const double dx = scale / ((1.0 - t) * (1.0 - t));
      return std::exp(half_cauchy_logpdf(x, scale)) * dx;
    };
    double s = f(0.0) + f(1.0);
    for (int i = 1; i < n; ++i) s += f(i * h) * ((i % 2) ? 4.0 : 2.0);
    EXPECT_NEAR(s * h / 3.0, 1.0, 1e-4) << scale;
  }
}

namespace {
EmuObservation level(int year, double value, double sd) {
  EmuObservation e;
  e.country_id = "C1";
  e.year = year;
  e.kind = EmuKind::Level;
  e.value = value;
  e.sd = sd;
  e.target_groups = {PopulationGroup::AWRA};
  return e;
}
}  // namespace

TEST(RateOfChange, ConsecutivePair) {
  auto r = rate_of_change({level(2019, 0.20, 0.01), level(2020, 0.23, 0.01)});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].year, 2020);
  EXPECT_EQ(r[0].kind, EmuKind::Rate);
  EXPECT_NEAR(r[0].value, 0.03, 1e-12);
  EXPECT_NEAR(r[0].sd, 0.0141421, 1e-7);
}

TEST(RateOfChange, SinglePointAndGaps) {
  EXPECT_TRUE(rate_of_change({level(2019, 0.20, 0.01)}).empty());
  EXPECT_TRUE(rate_of_change({level(2018, 0.20, 0.01), level(2020, 0.24, 0.01)}).empty());
  EXPECT_TRUE(rate_of_change({}).empty());
}

TEST(RateOfChange, CountEqualsConsecutivePairs) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution skip(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EmuObservation> levels;
    int year = 2000;
    for (int i = 0; i < 12; ++i) {
      year += skip(rng) ? 2 : 1;
      levels.push_back(level(year, 0.3, 0.01));
    }
    std::size_t pairs = 0;
    for (std::size_t i = 1; i < levels.size(); ++i) {
      pairs += (levels[i].year - levels[i - 1].year == 1) ? 1 : 0;
    }
    auto rates = rate_of_change(levels);
    ASSERT_EQ(rates.size(), pairs);
    for (const auto& r : rates) {
      bool has_prev = false;
      for (const auto& l : levels) has_prev |= (l.year == r.year - 1);
      ASSERT_TRUE(has_prev);
    }
  }
}

TEST(Validation, SurveyBoundaryRejected) {
  SurveyObservation s{"C1", PopulationGroup::MWRA, 2015.5, 0.0, 0.01, "DHS"};
  EXPECT_THROW(check(s), std::invalid_argument);
  s.value = 1.0;
  EXPECT_THROW(check(s), std::invalid_argument);
  s.value = 0.4;
  EXPECT_NO_THROW(check(s));
  s.se = 0.0;
  EXPECT_THROW(check(s), std::invalid_argument);
}

TEST(Validation, EmuRanges) {
  auto e = level(2019, 1.2, 0.01);
  EXPECT_THROW(check(e), std::invalid_argument);
  e.value = 0.3;
  EXPECT_NO_THROW(check(e));
  e.sd = -0.1;
  EXPECT_THROW(check(e), std::invalid_argument);
  e.sd = 0.01;
  e.target_groups.clear();
  EXPECT_THROW(check(e), std::invalid_argument);
}

TEST(DataTypes, Codes) {
  EXPECT_EQ(kAllDataTypes.size(), 4u);
  for (int c = 1; c <= 4; ++c) EXPECT_EQ(code(data_type_from_code(c)), c);
  EXPECT_THROW(data_type_from_code(5), std::invalid_argument);
  EXPECT_THROW(data_type_from_code(0), std::invalid_argument);
  EXPECT_EQ(group_from_string("UWRA"), PopulationGroup::UWRA);
  EXPECT_THROW(group_from_string("WRA"), std::invalid_argument);
}

TEST(HyperDefaults, PublishedValues) {
  const auto h = published_hyper_defaults();
  EXPECT_NO_THROW(check(h));
  EXPECT_DOUBLE_EQ(h[DataType::EmuClients].theta_hat, -4.06);
  EXPECT_DOUBLE_EQ(h[DataType::EmuFacilities].theta_hat, -2.77);
  EXPECT_DOUBLE_EQ(h[DataType::FpVisits].theta_sd, 0.35);
  EXPECT_EQ(h[DataType::FpUsers].n_obs, 40);
  EXPECT_DOUBLE_EQ(h.tau_hat, 0.84);
}

TEST(Quantile, Type7) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
}
