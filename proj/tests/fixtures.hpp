#pragma once

#include <string>
#include <vector>

#include "fpemu/core.hpp"
#include "fpemu/mcmc.hpp"

namespace fixtures {

inline fpemu::mcmc::SamplerConfig sampler(int warmup = 1000, int samples = 1000,
                                          std::uint64_t seed = 11) {
  fpemu::mcmc::SamplerConfig c;
  c.n_chains = 4;
  c.n_warmup = warmup;
  c.n_samples = samples;
  c.seed = seed;
  return c;
}

inline fpemu::SurveyObservation survey(std::string country, double year, double value,
                                       double se = 0.02,
                                       fpemu::PopulationGroup g = fpemu::PopulationGroup::MWRA) {
  fpemu::SurveyObservation s;
  s.country_id = std::move(country);
  s.group = g;
  s.year = year;
  s.value = value;
  s.se = se;
  s.source_id = "S" + std::to_string(static_cast<int>(year));
  return s;
}

inline fpemu::EmuObservation rate(std::string country, fpemu::DataType d, int year, double dz,
                                  double s,
                                  std::vector<fpemu::PopulationGroup> groups = {
                                      fpemu::PopulationGroup::MWRA},
                                  bool selected = true) {
  fpemu::EmuObservation e;
  e.country_id = std::move(country);
  e.data_type = d;
  e.year = year;
  e.kind = fpemu::EmuKind::Rate;
  e.value = dz;
  e.sd = s;
  e.target_groups = std::move(groups);
  e.selected = selected;
  return e;
}

// Rising country: surveys 2008, 2013, 2018 plus clients rates 2010..2020.
inline std::vector<fpemu::SurveyObservation> rising_surveys(const std::string& c = "A") {
  return {survey(c, 2008, 0.20), survey(c, 2013, 0.25), survey(c, 2018, 0.31)};
}

inline std::vector<fpemu::EmuObservation> rising_emu(const std::string& c = "A", double s = 0.004,
                                                     double slope = 0.015) {
  std::vector<fpemu::EmuObservation> out;
  for (int y = 2010; y <= 2020; ++y) {
    out.push_back(rate(c, fpemu::DataType::EmuClients, y, slope, s));
  }
  return out;
}

}  // namespace fixtures
