// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: fpemu_acceptance <path to fpemu CLI> <scratch dir>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fpemu/countryfit.hpp"
#include "fpemu/hypertrain.hpp"
#include "fpemu/io.hpp"
#include "fpemu/mcmc.hpp"
#include "fpemu/synth.hpp"
#include "fpemu/validate.hpp"

namespace fs = std::filesystem;
using namespace fpemu;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

mcmc::SamplerConfig sampler(int warmup, int samples, std::uint64_t seed) {
  mcmc::SamplerConfig c;
  c.n_warmup = warmup;
  c.n_samples = samples;
  c.seed = seed;
  return c;
}

// 1. Normal-normal model with known variance.
Outcome conjugate() {
  const auto t0 = Clock::now();
  const std::vector<double> y = {4.1, 3.6, 5.0, 4.4, 3.9, 4.8, 4.2, 4.6, 3.7, 4.3};
  const double sigma = 1.2, m0 = 0.0, s0 = 3.0;
  double sum = 0.0;
  for (double v : y) sum += v;
  const double prec = 1.0 / (s0 * s0) + y.size() / (sigma * sigma);
  const double post_mean = (m0 / (s0 * s0) + sum / (sigma * sigma)) / prec;
  const double post_sd = std::sqrt(1.0 / prec);
  auto lp = [&](std::span<const double> x) {
    double s = normal_logpdf(x[0], m0, s0);
    for (double v : y) s += normal_logpdf(v, x[0], sigma);
    return s;
  };
  const auto draws = mcmc::sample(lp, {{0.0}, {2.0}, {6.0}, {8.0}}, sampler(2000, 20000, 7));
  const auto xs = draws.flat(0);
  const double m = mean(xs), sd = sample_sd(xs);
  const double rm = std::abs(m - post_mean) / post_mean;
  const double rs = std::abs(sd - post_sd) / post_sd;
  const double secs = seconds_since(t0);
  return {rm < 0.02 && rs < 0.02 && secs < 10.0,
          "mean " + fmt(m) + " vs " + fmt(post_mean) + ", sd " + fmt(sd) + " vs " + fmt(post_sd) +
              ", " + fmt(secs, 3) + " s"};
}

synth::SynthScenario recovery_scenario() {
  synth::SynthScenario sc;
  sc.name = "recovery";
  sc.n_countries = 20;
  sc.types_per_country = 2;
  sc.seed = 2024;
  return sc;
}

// 2. Hyperparameter recovery.
Outcome recovery() {
  const auto t0 = Clock::now();
  const auto sc = recovery_scenario();
  const auto data = synth::generate(sc);
  std::set<std::string> countries;
  for (const auto& r : data.training) countries.insert(r.country_id);
  hyper::FitOptions o;
  o.abort_on_nonconvergence = false;
  const auto fit = hyper::fit_hyper(data.training, sampler(2000, 2000, 3), o);
  bool ok = data.training.size() >= 150 && countries.size() >= 10;
  std::string z;
  for (auto d : kAllDataTypes) {
    const auto& e = fit.estimates[d];
    const double zz = (e.theta_hat - sc.theta[index(d)]) / e.theta_sd;
    ok = ok && e.n_obs > 0 && std::abs(zz) <= 2.0;
    z += fmt(zz, 2) + " ";
  }
  const double tau = fit.estimates.tau_hat;
  ok = ok && tau > 0.4 && tau < 1.6;
  const double secs = seconds_since(t0);
  ok = ok && secs < 300.0;
  return {ok, std::to_string(data.training.size()) + " rows / " + std::to_string(countries.size()) +
                  " countries, theta z = " + z + "tau_hat " + fmt(tau, 3) + ", " + fmt(secs, 3) +
                  " s"};
}

// 3. Shrinkage for a pair with no records.
Outcome shrinkage() {
  const auto sc = recovery_scenario();
  const auto data = synth::generate(sc);
  hyper::FitOptions o;
  o.abort_on_nonconvergence = false;
  o.extra_pairs = {{"UNSEEN", DataType::EmuFacilities}};
  const auto fit = hyper::fit_hyper(data.training, sampler(2000, 5000, 5), o);
  const std::size_t k = fit.pairs.size() - 1;
  const auto& th = fit.theta[index(DataType::EmuFacilities)];

  // Compare the draws with independent draws from N(theta, tau^2) built on the
  // same (theta, tau) sample.
  const auto& draws = fit.draws;
  mcmc::Chains u(draws.n_chains());
  std::vector<double> ls, ref;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z;
  for (int c = 0, j = 0; c < draws.n_chains(); ++c) {
    for (int i = 0; i < draws.n_samples(); ++i, ++j) {
      u[c].push_back(fit.log_sigma[k][j]);
      ls.push_back(fit.log_sigma[k][j]);
      ref.push_back(th[j] + fit.tau[j] * z(rng));
    }
  }
  const double ess = mcmc::ess(u).value;
  const double sd_ref = sample_sd(ref);
  const double mcse_mean = sd_ref / std::sqrt(ess);
  const double mcse_sd = sd_ref / std::sqrt(2.0 * ess);
  const double dm = std::abs(mean(ls) - mean(ref));
  const double ds = std::abs(sample_sd(ls) - sd_ref);
  return {dm < 3.0 * mcse_mean && ds < 3.0 * mcse_sd,
          "mean " + fmt(mean(ls)) + " vs " + fmt(mean(ref)) + " (" + fmt(dm / mcse_mean, 2) +
              " MCSE), sd " + fmt(sample_sd(ls)) + " vs " + fmt(sd_ref) + " (" +
              fmt(ds / mcse_sd, 2) + " MCSE)"};
}

// 4. Shipped defaults.
Outcome plugin_defaults() {
  const auto t0 = Clock::now();
  const auto h = io::read_hyper(FPEMU_DEFAULTS_PATH);
  const auto& c = h[DataType::EmuClients];
  const double median_sigma = std::exp(c.theta_hat);
  const bool ok = std::abs(median_sigma - 0.0172) < 5e-5 && median_sigma > c.ci_low &&
                  median_sigma < c.ci_high && c.ci_low == 0.01 && c.ci_high == 0.03 &&
                  h.tau_hat == 0.84 && seconds_since(t0) < 1.0;
  return {ok, "exp(" + fmt(c.theta_hat) + ") = " + fmt(median_sigma, 4) + " in (" + fmt(c.ci_low) +
                  ", " + fmt(c.ci_high) + ")"};
}

// 5. Mode isolation.
Outcome mode_isolation() {
  const auto t0 = Clock::now();
  const std::vector<SurveyObservation> s = {{"A", PopulationGroup::MWRA, 2006, 0.18, 0.015, "s1"},
                                            {"A", PopulationGroup::MWRA, 2011, 0.24, 0.02, "s2"},
                                            {"A", PopulationGroup::MWRA, 2017, 0.29, 0.02, "s3"}};
  const auto h = published_hyper_defaults();
  const auto cfg = sampler(2000, 2000, 9);
  const auto so = country::fit_country(s, {}, h, country::FitMode::SurveyOnly, {2006, 2023}, cfg);
  const auto se = country::fit_country(s, {}, h, country::FitMode::SurveyEmu, {2006, 2023}, cfg);
  const double secs = seconds_since(t0);
  const bool same = so.eta == se.eta && so.eta.size() == so.n_draws * 18;
  return {same && secs < 60.0, std::to_string(so.eta.size()) + " eta values compared, " +
                                   (same ? "identical" : "different") + ", " + fmt(secs, 3) + " s"};
}

// 6. Influence of EMU falls as its s grows.
Outcome influence() {
  const auto t0 = Clock::now();
  const std::vector<SurveyObservation> s = {{"A", PopulationGroup::MWRA, 2008, 0.20, 0.02, "s1"},
                                            {"A", PopulationGroup::MWRA, 2013, 0.25, 0.02, "s2"},
                                            {"A", PopulationGroup::MWRA, 2018, 0.31, 0.02, "s3"}};
  auto emu = [](double scale) {
    std::vector<EmuObservation> out;
    for (int y = 2010; y <= 2023; ++y) {
      out.push_back({"A", DataType::EmuClients, y, EmuKind::Rate, y <= 2018 ? 0.012 : 0.03,
                     0.004 * scale, {PopulationGroup::MWRA}, true});
    }
    return out;
  };
  const auto h = published_hyper_defaults();
  const auto cfg = sampler(2000, 4000, 13);
  const country::YearRange years{2008, 2023};
  const double so = country::fit_country(s, {}, h, country::FitMode::SurveyOnly, years, cfg)
                        .at_year(2023).rho.median;
  std::vector<double> gaps;
  for (double k : {1.0, 10.0, 100.0}) {
    const double se = country::fit_country(s, emu(k), h, country::FitMode::SurveyEmu, years, cfg)
                          .at_year(2023).rho.median;
    gaps.push_back(100.0 * std::abs(se - so));
  }
  bool ok = true;
  for (std::size_t i = 1; i < gaps.size(); ++i) ok = ok && gaps[i] <= gaps[i - 1] + 0.05;
  const double secs = seconds_since(t0);
  return {ok && secs < 300.0, "|EMU - survey-only| at 2023 for s x1, x10, x100: " + fmt(gaps[0], 3) +
                                  ", " + fmt(gaps[1], 3) + ", " + fmt(gaps[2], 3) + " pp, " +
                                  fmt(secs, 3) + " s"};
}

// 7. Coverage on a well-specified ensemble.
Outcome coverage() {
  const auto t0 = Clock::now();
  synth::SynthScenario sc;
  sc.name = "calibration";
  sc.n_countries = 200;
  sc.process_from_prior = true;
  sc.survey_years = {2001, 2004, 2007, 2010, 2013, 2016, 2019};
  sc.seed = 7;
  const auto data = synth::generate(sc);
  const auto cases = validate::build_cases(data.surveys, data.emu);
  const auto rep = validate::run_validation(cases, synth::true_hyper(sc), sampler(2000, 2000, 7));
  bool ok = rep.rows.size() == 2;
  std::string d;
  for (const auto& r : rep.rows) {
    ok = ok && r.metrics.n >= 200 && r.metrics.coverage >= 92.0 && r.metrics.coverage <= 98.0;
    d += validate::model_label(r.model) + " " + fmt(r.metrics.coverage, 3) + "% of " +
         std::to_string(r.metrics.n) + ", ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 1800.0;
  return {ok, d + std::to_string(rep.warnings.size()) + " convergence warnings, " + fmt(secs, 4) +
                  " s"};
}

// 8. EMU helps when it tracks a trend change after the last training survey.
Outcome emu_benefit() {
  const auto t0 = Clock::now();
  int wins = 0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    synth::SynthScenario sc;
    sc.name = "post-survey trend change";
    sc.n_countries = 4;
    sc.survey_years = {2004, 2009, 2014, 2019};
    sc.breakpoint = synth::Breakpoint{2014, 0.2};
    sc.emu_start = 2008;
    sc.emu_end = 2020;
    sc.seed = 1000 + r;
    const auto data = synth::generate(sc);
    const auto cases = validate::build_cases(data.surveys, data.emu);
    const auto rep = validate::run_validation(cases, synth::true_hyper(sc),
                                              sampler(1000, 1000, 1000 + r));
    double so = 0, se = 0;
    for (const auto& row : rep.rows) {
      (row.model == country::FitMode::SurveyOnly ? so : se) = row.metrics.rmse;
    }
    if (se <= so) ++wins;
  }
  // One-sided sign test.
  double p = 0.0;
  for (int k = wins; k <= reps; ++k) {
    p += std::exp(std::lgamma(reps + 1.0) - std::lgamma(k + 1.0) - std::lgamma(reps - k + 1.0) -
                  reps * std::log(2.0));
  }
  const double secs = seconds_since(t0);
  return {p < 0.05 && secs < 1800.0, std::to_string(wins) + "/" + std::to_string(reps) +
                                          " replicates with survey+EMU RMSE <= survey-only, p = " +
                                          fmt(p, 3) + ", " + fmt(secs, 4) + " s"};
}

// 9. Metric fixtures.
Outcome metric_fixtures() {
  const auto m = validate::metrics({3, 4}, {true, false});
  bool ok = m.me == 3.5 && m.mae == 3.5 && std::abs(m.rmse - 3.5355) < 5e-5 && m.coverage == 50.0;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 30);
  std::normal_distribution<double> z(0.5, 3.0);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> e(static_cast<std::size_t>(len(rng)));
    for (auto& v : e) v = z(rng);
    const auto r = validate::metrics(e, std::vector<bool>(e.size(), true));
    if (r.rmse < r.mae * (1 - 1e-12) || r.mae < std::abs(r.me) * (1 - 1e-12)) ++bad;
  }
  ok = ok && bad == 0;
  return {ok, "ME " + fmt(m.me) + ", MAE " + fmt(m.mae) + ", RMSE " + fmt(m.rmse, 5) + ", coverage " +
                  fmt(m.coverage) + "%, ordering violations " + std::to_string(bad) + "/1000"};
}

// 10. CLI determinism.
Outcome determinism(const std::string& cli, const fs::path& scratch) {
  const fs::path in = scratch / "inputs";
  fs::remove_all(scratch);
  fs::create_directories(in);
  synth::SynthScenario sc;
  sc.n_countries = 3;
  sc.types_per_country = 2;
  sc.seed = 31;
  const auto data = synth::generate(sc);
  io::write_text((in / "surveys.csv").string(), io::surveys_csv(data.surveys));
  io::write_text((in / "emu.csv").string(), io::emu_csv(data.emu));
  auto training = data.training;
  {
    synth::SynthScenario more = sc;
    more.n_countries = 12;
    more.seed = 32;
    training = synth::generate(more).training;
  }
  io::write_text((in / "training.csv").string(), io::training_csv(training));
  io::write_text((in / "scenario.json").string(),
                 R"({"name": "tiny", "n_countries": 3, "seed": 5, "mode": "generate"})");

  const std::string quick = " --chains 2 --warmup 300 --samples 300 --seed 17";
  const fs::path out = scratch / "out";
  const std::vector<std::string> commands = {
      "train-hyper --training " + (in / "training.csv").string() + " --out " + (out / "hyper.json").string() + quick,
      "fit --surveys " + (in / "surveys.csv").string() + " --emu " + (in / "emu.csv").string() +
          " --mode both --horizon 3 --out-dir " + (out / "fit").string() + quick,
      "validate --surveys " + (in / "surveys.csv").string() + " --emu " + (in / "emu.csv").string() +
          " --out-dir " + (out / "validate").string() + quick,
      "impact --fit-dir " + (out / "fit").string() + " --target-year 2023",
      "simulate --scenario " + (in / "scenario.json").string() + " --out-dir " + (out / "sim").string()};

  auto run_all = [&](std::map<std::string, std::string>& files) {
    fs::remove_all(out);
    for (const auto& c : commands) {
      const int rc = std::system((cli + " " + c + " > /dev/null 2>&1").c_str());
      if (rc != 0 && !(WIFEXITED(rc) && WEXITSTATUS(rc) == 2)) return "'" + c.substr(0, c.find(' ')) + "' failed";
    }
    for (const auto& e : fs::recursive_directory_iterator(out)) {
      if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = slurp(e.path());
    }
    return std::string();
  };
  std::map<std::string, std::string> a, b;
  if (auto err = run_all(a); !err.empty()) return {false, err};
  if (auto err = run_all(b); !err.empty()) return {false, err};
  int differ = 0;
  for (const auto& [name, content] : a) {
    if (!b.count(name) || b[name] != content) ++differ;
  }
  const bool ok = a.size() == b.size() && differ == 0 && a.size() >= 15;
  return {ok, std::to_string(commands.size()) + " commands, " + std::to_string(a.size()) +
                  " output files, " + std::to_string(differ) + " differ"};
}

// 11. Golden layouts.
Outcome golden() {
  const std::string t1 = io::table1_csv(io::read_hyper(FPEMU_DEFAULTS_PATH));
  std::vector<validate::ReportRow> rows = {
      {PopulationGroup::MWRA, country::FitMode::SurveyOnly, {23, 95.652, 0.3, 2.9, 3.7}},
      {PopulationGroup::MWRA, country::FitMode::SurveyEmu, {23, 95.652, 0.1, 2.8, 3.5}},
      {PopulationGroup::UWRA, country::FitMode::SurveyOnly, {22, 90.909, 0.2, 2.3, 2.9}},
      {PopulationGroup::UWRA, country::FitMode::SurveyEmu, {22, 95.455, -0.01, 2.3, 2.8}}};
  std::ostringstream t2;
  validate::write_table2(t2, rows);
  const bool a = t1 == slurp(FPEMU_GOLDEN_DIR "/table1.csv");
  const bool b = t2.str() == slurp(FPEMU_GOLDEN_DIR "/table2.csv");
  return {a && b, std::string("Table 1 ") + (a ? "matches" : "differs") + ", Table 2 " +
                      (b ? "matches" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: fpemu_acceptance <fpemu binary> <scratch dir>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path scratch = argv[2];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"conjugate normal-normal oracle", conjugate},
      {"hyperparameter recovery", recovery},
      {"shrinkage of an unseen pair", shrinkage},
      {"shipped defaults plug-in", plugin_defaults},
      {"mode isolation", mode_isolation},
      {"influence monotonicity", influence},
      {"coverage calibration", coverage},
      {"EMU benefit direction", emu_benefit},
      {"metric fixtures", metric_fixtures},
      {"CLI determinism", [&] { return determinism(cli, scratch); }},
      {"report layouts", golden}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
