#pragma once

// Synthetic countries simulated from the same model family the fitting code
// assumes, for recovery and calibration checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpemu/core.hpp"
#include "fpemu/countryfit.hpp"
#include "fpemu/hypertrain.hpp"
#include "fpemu/mcmc.hpp"
#include "fpemu/validate.hpp"

namespace fpemu::synth {

enum class SdPattern { Constant, Growing };

// Change of drift at a given year, outside the simulated process family.
struct Breakpoint {
  int year = 0;
  double mu_after = 0.0;
};

struct SynthScenario {
  std::string name = "scenario";
  int n_countries = 10;
  int year_start = 2000;
  int year_end = 2020;
  std::array<double, 4> theta = {-4.0, -2.8, -3.5, -3.1};
  double tau = 0.8;

  // With process_from_prior each country draws (phi, mu, omega) from the
  // fitting priors, redrawing until the whole trajectory stays inside
  // [plausible_low, plausible_high]; otherwise the fixed values are used.
  bool process_from_prior = false;
  double plausible_low = 0.01;
  double plausible_high = 0.9;
  double phi = 0.5;
  double mu = 0.06;     // logit units per year
  double omega = 0.04;
  double start_low = 0.08;   // initial mCPR drawn uniformly in [low, high]
  double start_high = 0.35;
  std::optional<Breakpoint> breakpoint;

  std::vector<int> survey_years = {2002, 2007, 2012, 2017};
  double survey_se_logit = 0.08;

  // Data types cycled across countries; each country carries
  // `types_per_country` consecutive entries and the first one is selected.
  std::vector<DataType> emu_types = {DataType::EmuClients, DataType::EmuFacilities,
                                     DataType::FpVisits, DataType::FpUsers};
  int types_per_country = 1;
  int emu_start = 2006;
  int emu_end = 2020;
  double emu_s = 0.005;
  SdPattern emu_s_pattern = SdPattern::Constant;
  double emu_s_growth = 0.1;  // relative increase per year when growing

  PopulationGroup group = PopulationGroup::MWRA;
  std::uint64_t seed = 1;
};

inline void check(const SynthScenario& s) {
  auto fail = [&](const std::string& m) {
    throw std::invalid_argument("scenario '" + s.name + "': " + m);
  };
  if (s.n_countries < 1) fail("n_countries must be >= 1");
  if (s.year_end - s.year_start < 2) fail("year range must span at least three years");
  if (!(s.tau > 0.0)) fail("tau must be > 0");
  if (!(s.phi >= 0.0 && s.phi < 1.0)) fail("phi must lie in [0,1)");
  if (!(s.omega > 0.0)) fail("omega must be > 0");
  if (!(s.start_low > 0.0 && s.start_low <= s.start_high && s.start_high < 1.0)) {
    fail("start levels must satisfy 0 < start_low <= start_high < 1");
  }
  if (s.survey_years.empty()) fail("at least one survey year is required");
  for (int y : s.survey_years) {
    if (y < s.year_start || y > s.year_end) fail("survey year outside the year range");
  }
  if (!(s.survey_se_logit > 0.0)) fail("survey_se_logit must be > 0");
  if (s.emu_types.empty()) fail("emu_types must not be empty");
  if (s.types_per_country < 0 || s.types_per_country > 4) {
    fail("types_per_country must lie in 0-4");
  }
  if (s.types_per_country > 0 &&
      (s.emu_start <= s.year_start || s.emu_end > s.year_end || s.emu_start > s.emu_end)) {
    fail("EMU years must satisfy year_start < emu_start <= emu_end <= year_end");
  }
  if (!(s.emu_s >= 0.0)) fail("emu_s must be >= 0");
  if (!(s.emu_s_growth >= 0.0)) fail("emu_s_growth must be >= 0");
}

struct CountryTruth {
  std::string country_id;
  int year_start = 0;
  std::vector<double> rho;  // one per year
  double phi = 0.0;
  double mu = 0.0;
  double omega = 0.0;
  std::map<DataType, double> log_sigma;
  DataType selected = DataType::EmuClients;
};

struct SynthData {
  SynthScenario scenario;
  std::vector<CountryTruth> truth;
  std::vector<SurveyObservation> surveys;
  std::vector<EmuObservation> emu;  // Rate rows
  std::vector<hyper::TrainingRecord> training;
  std::vector<hyper::McprEstimate> mcpr;  // true annual changes
};

inline double emu_sd(const SynthScenario& s, int year) {
  if (s.emu_s_pattern == SdPattern::Constant) return s.emu_s;
  return s.emu_s * (1.0 + s.emu_s_growth * (year - s.emu_start));
}

inline std::string country_name(int i) {
  std::string id = std::to_string(i + 1);
  return "C" + std::string(id.size() < 3 ? 3 - id.size() : 0, '0') + id;
}

inline SynthData generate(const SynthScenario& scenario) {
  check(scenario);
  SynthData out;
  out.scenario = scenario;
  const int T = scenario.year_end - scenario.year_start + 1;
  for (int c = 0; c < scenario.n_countries; ++c) {
    auto rng = mcmc::detail::substream(scenario.seed, c, 0);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(scenario.start_low, scenario.start_high);

    CountryTruth truth;
    truth.country_id = country_name(c);
    truth.year_start = scenario.year_start;

    std::vector<double> eta(static_cast<std::size_t>(T));
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) {
        throw std::invalid_argument("scenario '" + scenario.name +
                                    "': no prior draw stays inside the plausible range");
      }
      truth.phi = scenario.phi;
      truth.mu = scenario.mu;
      truth.omega = scenario.omega;
      if (scenario.process_from_prior) {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::cauchy_distribution<double> cauchy(0.0, country::kOmegaPriorScale);
        truth.phi = u01(rng);
        truth.mu = country::kMuPriorSd * z(rng);
        truth.omega = std::abs(cauchy(rng));
      }
      const double phi = truth.phi;
      const double omega = truth.omega;
      eta[0] = logit(u(rng));
      double prev = truth.mu + omega / std::sqrt(1.0 - phi * phi) * z(rng);
      eta[1] = eta[0] + prev;
      for (int t = 2; t < T; ++t) {
        const int year = scenario.year_start + t;
        double mu = truth.mu;
        if (scenario.breakpoint && year > scenario.breakpoint->year) {
          mu = scenario.breakpoint->mu_after;
        }
        const double d = phi * prev + (1.0 - phi) * mu + omega * z(rng);
        eta[t] = eta[t - 1] + d;
        prev = d;
      }
      truth.rho.resize(eta.size());
      for (std::size_t t = 0; t < eta.size(); ++t) truth.rho[t] = inverse_logit(eta[t]);
      if (!scenario.process_from_prior) break;
      const auto [lo, hi] = std::minmax_element(truth.rho.begin(), truth.rho.end());
      if (*lo >= scenario.plausible_low && *hi <= scenario.plausible_high) break;
    }

    for (int t = 1; t < T; ++t) {
      out.mcpr.push_back({truth.country_id, scenario.year_start + t, truth.rho[t] - truth.rho[t - 1]});
    }

    // Surveys: logit-normal around the truth; the reported se is the
    // proportion-scale equivalent of the logit sd at the observed value.
    double last_survey = -1e300;
    for (int y : scenario.survey_years) {
      const double v = inverse_logit(eta[y - scenario.year_start] + scenario.survey_se_logit * z(rng));
      SurveyObservation s;
      s.country_id = truth.country_id;
      s.group = scenario.group;
      s.year = y;
      s.value = v;
      s.se = scenario.survey_se_logit * v * (1.0 - v);
      s.source_id = "synth-" + std::to_string(y);
      out.surveys.push_back(s);
      last_survey = std::max(last_survey, static_cast<double>(y));
    }

    for (int k = 0; k < scenario.types_per_country; ++k) {
      const DataType d = scenario.emu_types[(static_cast<std::size_t>(c) * scenario.types_per_country + k) %
                                            scenario.emu_types.size()];
      if (truth.log_sigma.count(d)) continue;
      const double log_sigma = scenario.theta[index(d)] + scenario.tau * z(rng);
      truth.log_sigma[d] = log_sigma;
      if (k == 0) truth.selected = d;
      const double sigma = std::exp(log_sigma);
      for (int y = scenario.emu_start; y <= scenario.emu_end; ++y) {
        const int t = y - scenario.year_start;
        const double s = emu_sd(scenario, y);
        const double drho = truth.rho[t] - truth.rho[t - 1];
        EmuObservation e;
        e.country_id = truth.country_id;
        e.data_type = d;
        e.year = y;
        e.kind = EmuKind::Rate;
        e.value = std::clamp(drho + combined_sd(s, sigma) * z(rng), -1.0, 1.0);
        e.sd = s;
        e.target_groups = {scenario.group};
        e.selected = k == 0;
        out.emu.push_back(e);
        if (y < last_survey) {
          out.training.push_back({e.country_id, d, y, e.value, s, drho});
        }
      }
    }
    out.truth.push_back(std::move(truth));
  }
  return out;
}

inline HyperEstimates true_hyper(const SynthScenario& s) {
  HyperEstimates h;
  for (auto d : kAllDataTypes) {
    auto& t = h[d];
    t.theta_hat = s.theta[index(d)];
    t.theta_sd = 0.1;
    t.ci_low = std::exp(t.theta_hat - 0.196);
    t.ci_high = std::exp(t.theta_hat + 0.196);
  }
  h.tau_hat = s.tau;
  return h;
}

// ---------------------------------------------------------------------------
// End-to-end recovery

struct RecoveryReport {
  std::string scenario;
  int n_training = 0;
  int n_countries_training = 0;
  std::array<double, 4> theta_true{};
  std::array<double, 4> theta_hat{};
  std::array<double, 4> theta_sd{};
  std::array<double, 4> theta_z{};
  std::array<int, 4> theta_n{};
  double tau_true = 0.0;
  double tau_hat = 0.0;
  validate::ValidationReport validation;
  std::optional<validate::MetricRow> survey_only;
  std::optional<validate::MetricRow> survey_emu;

  bool theta_recovered = false;  // every observed type within 2 posterior SDs
  bool tau_recovered = false;    // tau_hat in (0.5 tau, 2 tau)
  bool emu_not_worse = false;    // survey+EMU RMSE <= survey-only RMSE
  bool passed() const { return theta_recovered && tau_recovered && emu_not_worse; }
};

inline RecoveryReport recovery_experiment(const SynthScenario& scenario,
                                          const mcmc::SamplerConfig& config,
                                          const validate::RunOptions& run = {}) {
  const auto data = generate(scenario);
  RecoveryReport rep;
  rep.scenario = scenario.name;
  rep.n_training = static_cast<int>(data.training.size());
  {
    std::set<std::string> cs;
    for (const auto& r : data.training) cs.insert(r.country_id);
    rep.n_countries_training = static_cast<int>(cs.size());
  }

  hyper::FitOptions ho;
  ho.abort_on_nonconvergence = false;
  const auto hfit = hyper::fit_hyper(data.training, config, ho);
  rep.theta_recovered = true;
  for (auto d : kAllDataTypes) {
    const auto i = index(d);
    rep.theta_true[i] = scenario.theta[i];
    rep.theta_hat[i] = hfit.estimates[d].theta_hat;
    rep.theta_sd[i] = hfit.estimates[d].theta_sd;
    rep.theta_n[i] = hfit.estimates[d].n_obs;
    rep.theta_z[i] = (rep.theta_hat[i] - rep.theta_true[i]) / rep.theta_sd[i];
    if (rep.theta_n[i] > 0 && std::abs(rep.theta_z[i]) > 2.0) rep.theta_recovered = false;
  }
  rep.tau_true = scenario.tau;
  rep.tau_hat = hfit.estimates.tau_hat;
  rep.tau_recovered = rep.tau_hat > 0.5 * scenario.tau && rep.tau_hat < 2.0 * scenario.tau;

  const auto cases = validate::build_cases(data.surveys, data.emu);
  rep.validation = validate::run_validation(cases, hfit.estimates, config, run);
  for (const auto& row : rep.validation.rows) {
    if (row.model == country::FitMode::SurveyOnly) rep.survey_only = row.metrics;
    else rep.survey_emu = row.metrics;
  }
  rep.emu_not_worse = rep.survey_only && rep.survey_emu &&
                      rep.survey_emu->rmse <= rep.survey_only->rmse;
  return rep;
}

}  // namespace fpemu::synth
