// fpemu: survey + EMU mCPR estimation from the command line.

#include <openssl/evp.h>

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fpemu/countryfit.hpp"
#include "fpemu/hypertrain.hpp"
#include "fpemu/io.hpp"
#include "fpemu/synth.hpp"
#include "fpemu/validate.hpp"

#ifndef FPEMU_VERSION
#define FPEMU_VERSION "0.0.0"
#endif
#ifndef FPEMU_DEFAULTS_PATH
#define FPEMU_DEFAULTS_PATH "data/hyper_defaults.json"
#endif

namespace fs = std::filesystem;
using namespace fpemu;
using io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitWarning = 2;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

// Records inputs, flags and outputs of one run.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void flag(const std::string& name, json value) { flags_[name] = std::move(value); }
  void input(const std::string& path) { inputs_.push_back(path); }
  void output(const std::string& path) { outputs_.push_back(path); }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const std::string& path) const {
    json j;
    j["tool"] = "fpemu";
    j["version"] = FPEMU_VERSION;
    j["command"] = command_;
    j["seed"] = seed_;
    j["flags"] = flags_;
    json in = json::array();
    for (const auto& p : inputs_) in.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    j["inputs"] = in;
    json out = json::array();
    for (const auto& p : outputs_) {
      out.push_back({{"path", fs::path(p).filename().string()}, {"sha256", sha256_file(p)}});
    }
    j["outputs"] = out;
    io::write_text(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  json flags_ = json::object();
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::uint64_t seed_ = 0;
};

struct SamplerFlags {
  int chains = 4;
  int warmup = 2000;
  int samples = 2000;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--chains", chains, "Number of MCMC chains")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--warmup", warmup, "Warmup iterations per chain")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--samples", samples, "Kept iterations per chain")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Random seed (falls back to FP_ESTIM_SEED)");
  }

  mcmc::SamplerConfig config() const {
    mcmc::SamplerConfig c;
    c.n_chains = chains;
    c.n_warmup = warmup;
    c.n_samples = samples;
    c.seed = resolved_seed();
    return c;
  }

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("FP_ESTIM_SEED"); env && *env) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used == std::string(env).size()) return v;
      } catch (const std::exception&) {
      }
      throw std::invalid_argument(std::string("FP_ESTIM_SEED is not an unsigned integer: ") + env);
    }
    return mcmc::SamplerConfig{}.seed;
  }

  void record(Manifest& m) const {
    m.flag("chains", chains);
    m.flag("warmup", warmup);
    m.flag("samples", samples);
    m.seed(resolved_seed());
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

HyperEstimates load_hyper(const std::string& path, Manifest& m) {
  m.input(path);
  return io::read_hyper(path);
}

// Runs f(i) for i in [0, n) on up to `jobs` threads; the first error wins.
template <class F>
void parallel_for(std::size_t n, int jobs, F f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (k <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < k; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// train-hyper

struct TrainArgs {
  std::string training;
  std::string out;
  std::string draws;
  SamplerFlags sampler;
};

int cmd_train_hyper(const TrainArgs& a) {
  Manifest m("train-hyper");
  m.input(a.training);
  a.sampler.record(m);
  const auto records = io::read_training(a.training);
  const auto fit = hyper::fit_hyper(records, a.sampler.config());

  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  const std::string stem = (out.parent_path() / out.stem()).string();
  const std::string table1 = stem + "_table1.csv";
  const std::string diag = stem + "_diagnostics.json";

  io::write_text(a.out, io::hyper_to_json(fit.estimates).dump(2) + "\n");
  io::write_text(table1, io::table1_csv(fit.estimates));

  json d;
  d["n_records"] = records.size();
  d["n_pairs"] = fit.pairs.size();
  d["converged"] = fit.converged;
  d["theta_rhat"] = fit.theta_rhat;
  d["tau_rhat"] = fit.tau_rhat;
  json ess = json::object();
  const auto e = fit.draws.ess();
  const auto r = fit.draws.rhat();
  json params = json::array();
  for (std::size_t p = 0; p < fit.draws.n_params(); ++p) {
    params.push_back({{"name", fit.draws.names()[p]}, {"rhat", r[p].value}, {"ess", e[p].value}});
  }
  d["parameters"] = params;
  d["warnings"] = fit.warnings;
  io::write_text(diag, d.dump(2) + "\n");
  m.output(a.out);
  m.output(table1);
  m.output(diag);
  if (!a.draws.empty()) {
    fit.draws.write_csv(a.draws);
    m.output(a.draws);
  }
  m.flag("training", a.training);
  m.flag("out", a.out);
  m.write(stem + "_manifest.json");

  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
  return fit.converged ? kExitOk : kExitWarning;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string surveys;
  std::string emu;
  std::string hyper = FPEMU_DEFAULTS_PATH;
  std::string mode = "both";
  std::vector<std::string> countries;
  std::vector<std::string> groups;
  std::string out_dir;
  int horizon = 5;
  std::optional<int> emu_type;
  bool pre_survey_only = false;
  SamplerFlags sampler;
  int jobs = 1;
};

struct FitJob {
  std::string country;
  PopulationGroup group;
  std::vector<SurveyObservation> surveys;
  std::vector<EmuObservation> emu;  // attached rates
  std::vector<EmuObservation> all_emu_rates;
  std::optional<DataType> emu_type;
  country::YearRange years;
};

int cmd_fit(const FitArgs& a) {
  Manifest m("fit");
  std::vector<country::FitMode> modes;
  if (a.mode == "both") {
    modes = {country::FitMode::SurveyOnly, country::FitMode::SurveyEmu};
  } else {
    modes = {country::mode_from_string(a.mode)};
  }
  const bool wants_emu =
      std::find(modes.begin(), modes.end(), country::FitMode::SurveyEmu) != modes.end();
  if (wants_emu && a.emu.empty()) {
    throw std::invalid_argument("--mode " + a.mode + " needs EMU data: pass --emu");
  }

  // Read and validate every input before any fit starts.
  m.input(a.surveys);
  const auto surveys = io::read_surveys(a.surveys);
  std::vector<EmuObservation> emu;
  if (!a.emu.empty()) {
    m.input(a.emu);
    emu = io::read_emu(a.emu);
  }
  const auto hyper = load_hyper(a.hyper, m);
  std::set<PopulationGroup> groups;
  for (const auto& g : a.groups) groups.insert(group_from_string(g));
  country::EmuSelection selection;
  if (a.emu_type) selection.override_type = data_type_from_code(*a.emu_type);

  std::map<std::string, std::map<PopulationGroup, std::vector<SurveyObservation>>> by_country;
  for (const auto& s : surveys) by_country[s.country_id][s.group].push_back(s);
  std::map<std::string, std::vector<EmuObservation>> emu_by_country;
  for (const auto& e : emu) emu_by_country[e.country_id].push_back(e);

  std::set<std::string> wanted(a.countries.begin(), a.countries.end());
  for (const auto& c : wanted) {
    if (!by_country.count(c)) {
      throw country::NoSurveyError("country " + c + " has no survey observations");
    }
  }

  std::vector<FitJob> jobs;
  for (const auto& [cid, by_group] : by_country) {
    if (!wanted.empty() && !wanted.count(cid)) continue;
    country::AttachedEmu attached;
    std::vector<EmuObservation> rates;
    if (auto it = emu_by_country.find(cid); it != emu_by_country.end()) {
      attached = country::attach_emu(it->second, selection);
      rates = to_rates(it->second);
    }
    for (const auto& [g, list] : by_group) {
      if (!groups.empty() && !groups.count(g)) continue;
      FitJob j;
      j.country = cid;
      j.group = g;
      j.surveys = list;
      j.emu = attached.rates(g);
      j.all_emu_rates = rates;
      j.emu_type = attached.data_type;
      j.years = country::default_year_range(j.surveys, j.emu, a.horizon);
      jobs.push_back(std::move(j));
    }
  }
  if (jobs.empty()) throw std::invalid_argument("no (country, group) pair matches the request");

  auto cfg = a.sampler.config();
  if (a.jobs > 1) cfg.parallel_chains = false;
  std::vector<std::vector<country::CountryFitResult>> results(jobs.size());
  parallel_for(jobs.size(), a.jobs, [&](std::size_t i) {
    const auto& j = jobs[i];
    auto c = cfg;
    c.seed = validate::case_seed(cfg.seed, j.country, j.group);
    for (auto mode : modes) {
      country::FitOptions fo;
      fo.country_id = j.country;
      fo.group = j.group;
      const auto& rates = mode == country::FitMode::SurveyEmu ? j.emu : std::vector<EmuObservation>{};
      results[i].push_back(country::fit_country(j.surveys, rates, hyper, mode, j.years, c, fo));
    }
  });

  ensure_dir(a.out_dir);
  std::ostringstream est, plot, roc;
  est << io::kEstimatesHeader << '\n';
  plot << io::kPlotHeader << '\n';
  json diags = json::array();
  std::vector<validate::RocRow> roc_rows;
  bool all_converged = true;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& j = jobs[i];
    for (const auto& f : results[i]) {
      io::write_estimates_rows(est, f);
      io::write_plot_rows(plot, f, j.surveys,
                          f.mode == country::FitMode::SurveyEmu ? j.emu : std::vector<EmuObservation>{});
      diags.push_back(io::diagnostics_json(f));
      all_converged = all_converged && f.converged;
      for (const auto& w : f.warnings) std::cerr << "warning: " << w << '\n';
      if (f.mode == country::FitMode::SurveyEmu && j.emu.empty()) {
        std::cerr << "warning: " << j.country << ' ' << label(j.group)
                  << ": no EMU rates attached; survey+EMU fit equals the survey-only fit\n";
      }
    }
    // Changes in EMU against the survey-only estimate of mCPR change.
    const auto& base = results[i].front();
    if (!j.all_emu_rates.empty() && base.mode == country::FitMode::SurveyOnly) {
      std::vector<hyper::McprEstimate> mcpr;
      for (const auto& y : base.per_year) {
        if (y.drho) mcpr.push_back({j.country, y.year, y.drho->median});
      }
      std::vector<EmuObservation> group_rates;
      for (const auto& r : j.all_emu_rates) {
        if (r.targets(j.group)) group_rates.push_back(r);
      }
      std::optional<std::map<std::string, double>> last;
      if (a.pre_survey_only) {
        double ly = j.surveys.front().year;
        for (const auto& s : j.surveys) ly = std::max(ly, s.year);
        last = std::map<std::string, double>{{j.country, ly}};
      }
      for (auto& r : validate::export_roc_comparison(group_rates, mcpr, last)) {
        roc_rows.push_back(r);
      }
    }
  }
  validate::write_roc(roc, roc_rows);

  const auto p_est = join(a.out_dir, "estimates.csv");
  const auto p_plot = join(a.out_dir, "plot_data.csv");
  const auto p_diag = join(a.out_dir, "diagnostics.json");
  const auto p_roc = join(a.out_dir, "roc_comparison.csv");
  io::write_text(p_est, est.str());
  io::write_text(p_plot, plot.str());
  io::write_text(p_diag, diags.dump(2) + "\n");
  io::write_text(p_roc, roc.str());
  for (const auto& p : {p_est, p_plot, p_diag, p_roc}) m.output(p);

  a.sampler.record(m);
  m.flag("mode", a.mode);
  m.flag("countries", a.countries);
  m.flag("groups", a.groups);
  m.flag("horizon", a.horizon);
  m.flag("emu_type", a.emu_type ? json(*a.emu_type) : json(nullptr));
  m.flag("pre_survey_only", a.pre_survey_only);
  m.write(join(a.out_dir, "manifest.json"));
  return all_converged ? kExitOk : kExitWarning;
}

// ---------------------------------------------------------------------------
// validate

struct ValidateArgs {
  std::string surveys;
  std::string emu;
  std::string hyper = FPEMU_DEFAULTS_PATH;
  std::string out_dir;
  bool pre_survey_only = false;
  std::optional<int> emu_type;
  SamplerFlags sampler;
  int jobs = 1;
};

int cmd_validate(const ValidateArgs& a) {
  Manifest m("validate");
  m.input(a.surveys);
  const auto surveys = io::read_surveys(a.surveys);
  std::vector<EmuObservation> emu;
  if (!a.emu.empty()) {
    m.input(a.emu);
    emu = io::read_emu(a.emu);
  }
  const auto hyper = load_hyper(a.hyper, m);

  validate::CaseOptions co;
  co.truncate_emu_after_holdout = a.pre_survey_only;
  if (a.emu_type) co.selection.override_type = data_type_from_code(*a.emu_type);
  const auto cases = validate::build_cases(surveys, emu, co);
  for (const auto& s : cases.skipped) std::cerr << "skipped: " << s << '\n';
  if (cases.cases.empty()) throw std::invalid_argument("no country/group has two or more surveys");

  validate::RunOptions ro;
  ro.jobs = a.jobs;
  const auto rep = validate::run_validation(cases, hyper, a.sampler.config(), ro);

  ensure_dir(a.out_dir);
  std::ostringstream t2, det;
  validate::write_table2(t2, rep.rows);
  validate::write_details(det, rep.details);
  const auto p_t2 = join(a.out_dir, "validation_report.csv");
  const auto p_det = join(a.out_dir, "validation_details.csv");
  io::write_text(p_t2, t2.str());
  io::write_text(p_det, det.str());
  m.output(p_t2);
  m.output(p_det);
  a.sampler.record(m);
  m.flag("pre_survey_only", a.pre_survey_only);
  m.flag("emu_type", a.emu_type ? json(*a.emu_type) : json(nullptr));
  m.write(join(a.out_dir, "manifest.json"));
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  return rep.all_converged ? kExitOk : kExitWarning;
}

// ---------------------------------------------------------------------------
// impact

struct ImpactArgs {
  std::string fit_dir;
  int target_year = 2023;
  std::string out;
};

int cmd_impact(const ImpactArgs& a) {
  Manifest m("impact");
  const auto p_est = join(a.fit_dir, "estimates.csv");
  const auto p_diag = join(a.fit_dir, "diagnostics.json");
  m.input(p_est);
  m.input(p_diag);
  const auto rows = io::read_estimates(p_est);

  std::ifstream din(p_diag);
  if (!din) throw std::runtime_error("cannot open " + p_diag);
  json diags;
  try {
    diags = json::parse(din);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(p_diag + ": " + e.what());
  }
  using Key = std::pair<std::string, PopulationGroup>;
  std::map<Key, std::optional<DataType>> emu_type;
  for (const auto& d : diags) {
    if (d.at("model").get<std::string>() != "survey+EMU") continue;
    const Key k{d.at("country_id").get<std::string>(),
                group_from_string(d.at("group").get<std::string>())};
    emu_type[k] = d.at("emu_data_type").is_null()
                      ? std::nullopt
                      : std::optional<DataType>(data_type_from_code(d.at("emu_data_type").get<int>()));
  }

  std::map<Key, std::map<country::FitMode, country::Summary>> at_target;
  std::set<Key> seen;
  for (const auto& r : rows) {
    const Key k{r.country_id, r.group};
    seen.insert(k);
    if (r.year == a.target_year) at_target[k][r.model] = r.rho;
  }
  std::vector<validate::ImpactInput> inputs;
  for (const auto& k : seen) {
    auto it = at_target.find(k);
    if (it == at_target.end()) {
      throw std::invalid_argument("target year " + std::to_string(a.target_year) +
                                  " is outside the fitted years of " + k.first + " " +
                                  std::string(label(k.second)));
    }
    const auto& by_mode = it->second;
    if (by_mode.size() != 2) {
      throw validate::PairingError("impact needs survey-only and survey+EMU fits for " + k.first +
                                   " " + std::string(label(k.second)));
    }
    validate::ImpactInput in;
    in.country_id = k.first;
    in.group = k.second;
    in.data_type = emu_type.count(k) ? emu_type[k] : std::nullopt;
    in.survey_only = by_mode.at(country::FitMode::SurveyOnly);
    in.survey_emu = by_mode.at(country::FitMode::SurveyEmu);
    inputs.push_back(in);
  }
  const auto table = validate::impact_analysis(inputs);
  std::ostringstream os;
  validate::write_impact(os, table);
  const std::string out = a.out.empty() ? join(a.fit_dir, "impact.csv") : a.out;
  const fs::path op(out);
  if (op.has_parent_path()) ensure_dir(op.parent_path().string());
  io::write_text(out, os.str());
  m.output(out);
  m.flag("target_year", a.target_year);
  m.write((op.parent_path() / (op.stem().string() + "_manifest.json")).string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string scenario;
  std::string out_dir;
  int jobs = 1;
};

int cmd_simulate(const SimulateArgs& a) {
  Manifest m("simulate");
  m.input(a.scenario);
  std::ifstream in(a.scenario);
  if (!in) throw std::runtime_error("cannot open " + a.scenario);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(a.scenario + ": " + e.what());
  }
  const auto sc = io::scenario_from_json(j, a.scenario);
  const std::string mode = j.value("mode", "generate");
  if (mode != "generate" && mode != "recovery") {
    throw std::invalid_argument(a.scenario + ": mode must be 'generate' or 'recovery'");
  }
  mcmc::SamplerConfig cfg;
  cfg.seed = sc.seed;
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    cfg.n_chains = s.value("chains", cfg.n_chains);
    cfg.n_warmup = s.value("warmup", cfg.n_warmup);
    cfg.n_samples = s.value("samples", cfg.n_samples);
    cfg.seed = s.value("seed", cfg.seed);
  }
  mcmc::check(cfg);

  ensure_dir(a.out_dir);
  const auto data = synth::generate(sc);
  const std::vector<std::pair<std::string, std::string>> files = {
      {"surveys.csv", io::surveys_csv(data.surveys)},
      {"emu.csv", io::emu_csv(data.emu)},
      {"training.csv", io::training_csv(data.training)},
      {"mcpr_changes.csv", io::mcpr_csv(data.mcpr)},
      {"truth.json", io::truth_json(data).dump(2) + "\n"}};
  for (const auto& [name, content] : files) {
    io::write_text(join(a.out_dir, name), content);
    m.output(join(a.out_dir, name));
  }

  int rc = kExitOk;
  if (mode == "recovery") {
    validate::RunOptions ro;
    ro.jobs = a.jobs;
    const auto rep = synth::recovery_experiment(sc, cfg, ro);
    json r;
    r["scenario"] = rep.scenario;
    r["n_training"] = rep.n_training;
    r["n_countries_training"] = rep.n_countries_training;
    json th = json::array();
    for (auto d : kAllDataTypes) {
      const auto i = index(d);
      th.push_back({{"data_type", code(d)},
                    {"truth", rep.theta_true[i]},
                    {"theta_hat", rep.theta_hat[i]},
                    {"theta_sd", rep.theta_sd[i]},
                    {"z", rep.theta_z[i]},
                    {"n_obs", rep.theta_n[i]}});
    }
    r["theta"] = th;
    r["tau_true"] = rep.tau_true;
    r["tau_hat"] = rep.tau_hat;
    r["theta_recovered"] = rep.theta_recovered;
    r["tau_recovered"] = rep.tau_recovered;
    r["emu_not_worse"] = rep.emu_not_worse;
    r["passed"] = rep.passed();
    const auto p_rec = join(a.out_dir, "recovery.json");
    io::write_text(p_rec, r.dump(2) + "\n");
    std::ostringstream t2, det;
    validate::write_table2(t2, rep.validation.rows);
    validate::write_details(det, rep.validation.details);
    io::write_text(join(a.out_dir, "validation_report.csv"), t2.str());
    io::write_text(join(a.out_dir, "validation_details.csv"), det.str());
    m.output(p_rec);
    m.output(join(a.out_dir, "validation_report.csv"));
    m.output(join(a.out_dir, "validation_details.csv"));
    std::cout << "recovery " << (rep.passed() ? "passed" : "failed") << ": theta "
              << (rep.theta_recovered ? "ok" : "off") << ", tau_hat " << rep.tau_hat << ", EMU RMSE "
              << (rep.emu_not_worse ? "not worse" : "worse") << '\n';
    for (const auto& w : rep.validation.warnings) std::cerr << "warning: " << w << '\n';
    if (!rep.validation.all_converged) rc = kExitWarning;
  }
  m.seed(cfg.seed);
  m.flag("mode", mode);
  m.write(join(a.out_dir, "manifest.json"));
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Survey and EMU based mCPR estimation"};
  app.set_version_flag("--version", std::string(FPEMU_VERSION));
  app.require_subcommand(1);
  int jobs = 1;
  app.add_option("--jobs", jobs, "Worker threads for independent fits")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train-hyper", "Fit data-type variance hyperparameters");
  t->add_option("--training", train.training, "Training CSV")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Hyperparameter JSON to write")->required();
  t->add_option("--draws", train.draws, "Optional CSV dump of posterior draws");
  train.sampler.add(t);

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit countries with survey-only and/or survey+EMU models");
  f->add_option("--surveys", fit.surveys, "Surveys CSV")->required()->check(CLI::ExistingFile);
  f->add_option("--emu", fit.emu, "EMU CSV")->check(CLI::ExistingFile);
  f->add_option("--hyper", fit.hyper, "Hyperparameter JSON")->capture_default_str()
      ->check(CLI::ExistingFile);
  f->add_option("--mode", fit.mode, "survey-only, survey+EMU or both")->capture_default_str()
      ->check(CLI::IsMember({"survey-only", "survey+EMU", "survey+emu", "both"}));
  f->add_option("--country", fit.countries, "Country to fit (repeatable; default all)");
  f->add_option("--group", fit.groups, "MWRA, UWRA or AWRA (repeatable; default all)")
      ->check(CLI::IsMember({"MWRA", "UWRA", "AWRA"}));
  f->add_option("--horizon", fit.horizon, "Forecast years past the last data year")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  f->add_option("--emu-type", fit.emu_type, "Override the selected EMU data type (1-4)")
      ->check(CLI::Range(1, 4));
  f->add_flag("--pre-survey-only", fit.pre_survey_only,
              "Restrict the EMU comparison export to years before the last survey");
  f->add_option("--out-dir", fit.out_dir, "Output directory")->required();
  fit.sampler.add(f);

  ValidateArgs val;
  auto* v = app.add_subcommand("validate", "Hold out the latest survey and score both models");
  v->add_option("--surveys", val.surveys, "Surveys CSV")->required()->check(CLI::ExistingFile);
  v->add_option("--emu", val.emu, "EMU CSV")->check(CLI::ExistingFile);
  v->add_option("--hyper", val.hyper, "Hyperparameter JSON")->capture_default_str()
      ->check(CLI::ExistingFile);
  v->add_option("--emu-type", val.emu_type, "Override the selected EMU data type (1-4)")
      ->check(CLI::Range(1, 4));
  v->add_flag("--pre-survey-only", val.pre_survey_only,
              "Drop EMU rates dated after the held-out survey");
  v->add_option("--out-dir", val.out_dir, "Output directory")->required();
  val.sampler.add(v);

  ImpactArgs imp;
  auto* i = app.add_subcommand("impact", "Difference in target-year estimates with and without EMU");
  i->add_option("--fit-dir", imp.fit_dir, "Directory written by 'fit --mode both'")
      ->required()->check(CLI::ExistingDirectory);
  i->add_option("--target-year", imp.target_year, "Year to compare")->capture_default_str();
  i->add_option("--out", imp.out, "Impact CSV (default <fit-dir>/impact.csv)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate synthetic data or run a recovery experiment");
  s->add_option("--scenario", sim.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--out-dir", sim.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    if (*t) return cmd_train_hyper(train);
    if (*f) {
      fit.jobs = jobs;
      return cmd_fit(fit);
    }
    if (*v) {
      val.jobs = jobs;
      return cmd_validate(val);
    }
    if (*i) return cmd_impact(imp);
    if (*s) {
      sim.jobs = jobs;
      return cmd_simulate(sim);
    }
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
