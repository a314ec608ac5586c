#pragma once

// JSON records emitted by the CLI. Key names are fixed; see README.

#include <vector>

#include "json.hpp"
#include "meanspace/metrics.hpp"
#include "meanspace/objective.hpp"
#include "meanspace/optim.hpp"

namespace meanspace::report {

using json = nlohmann::json;

inline json to_json(const LossRecord& r) {
  return {{"record", "loss"},
          {"iteration", r.iteration},
          {"level", r.level},
          {"reg", r.reg},
          {"def", r.def},
          {"seg", r.seg},
          {"total", r.total},
          {"lambda2", r.lambda2},
          {"mean_velocity_norm", r.mean_velocity_norm}};
}

inline json to_json(const LossReport& r) {
  return {{"reg", r.reg}, {"def", r.def}, {"seg", r.seg}, {"cons", r.cons}, {"total", r.total}};
}

inline std::vector<json> to_records(const BiasReport& b) {
  std::vector<json> out;
  out.push_back({{"record", "bias_summary"},
                 {"method", to_string(b.method)},
                 {"n", b.n},
                 {"kappa", b.kappa},
                 {"dice", b.dice},
                 {"accuracy_dice", b.accuracy_dice},
                 {"eps_volume", b.eps_volume},
                 {"eps_intensity_mean", b.eps_intensity_mean},
                 {"mean_velocity_norm", b.mean_velocity_norm}});
  for (std::size_t t = 0; t < b.per_timepoint.size(); ++t) {
    const TimePointBias& p = b.per_timepoint[t];
    out.push_back({{"record", "bias_timepoint"},
                   {"method", to_string(b.method)},
                   {"timepoint", t},
                   {"kappa", 100.0 * p.kappa},
                   {"dice", 100.0 * p.dice},
                   {"accuracy_dice", 100.0 * p.accuracy_dice},
                   {"volume_first", p.volume_first},
                   {"volume_second", p.volume_second},
                   {"intensity_first", p.intensity_first},
                   {"intensity_second", p.intensity_second},
                   {"eps_volume", p.eps_volume},
                   {"eps_intensity", p.eps_intensity}});
  }
  return out;
}

}  // namespace meanspace::report
