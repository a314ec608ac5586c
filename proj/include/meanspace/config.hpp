#pragma once

// Run configuration and its JSON form. Every run writes the fully resolved
// configuration next to its outputs; `from_json` accepts the same layout
// (missing keys keep their defaults, unknown keys are rejected).

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "meanspace/error.hpp"
#include "meanspace/metrics.hpp"
#include "meanspace/objective.hpp"
#include "meanspace/optim.hpp"
#include "meanspace/phantom.hpp"
#include "meanspace/segment.hpp"

namespace meanspace {

enum class Mode { mean, fixed };

inline const char* to_string(Mode m) { return m == Mode::mean ? "mean" : "fixed"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "mean") return Mode::mean;
  if (s == "fixed") return Mode::fixed;
  throw Error(ErrorCode::config, "mode", "mode must be 'mean' or 'fixed', got '" + s + "'");
}

struct RunConfig {
  Mode mode = Mode::mean;
  LossWeights weights;
  OptimConfig optim;
  FusionConfig fusion;
  std::vector<std::string> images;
  std::vector<std::string> labels;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool slice_png = false;

  void validate() const {
    weights.validate();
    optim.validate();
    fusion.validate();
    if (images.size() < 2) throw Error(ErrorCode::config, "images", "at least two images are required");
    if (!labels.empty() && labels.size() != images.size())
      throw Error(ErrorCode::config, "labels", "give one label file per image or none");
    if (out_dir.empty()) throw Error(ErrorCode::config, "out_dir", "out_dir must not be empty");
  }
};

namespace config {

using json = nlohmann::json;

inline json to_json(const LossWeights& w) {
  return {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"alpha", w.alpha},
          {"beta", w.beta},       {"gamma", w.gamma},     {"w", w.w}};
}

inline json to_json(const OptimConfig& o) {
  return {{"learning_rate", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"epsilon", o.epsilon},
          {"max_iters", o.max_iters},
          {"levels", o.levels},
          {"tolerance", o.tolerance},
          {"window", o.window},
          {"squaring_steps", o.integration.squaring_steps},
          {"lambda2_schedule",
           {{"enabled", o.lambda2_schedule.enabled},
            {"start", o.lambda2_schedule.start},
            {"step", o.lambda2_schedule.step},
            {"cap", o.lambda2_schedule.cap},
            {"iters_per_epoch", o.lambda2_schedule.iters_per_epoch}}}};
}

inline json to_json(const FusionConfig& f) {
  return {{"threshold", f.threshold}, {"rule", f.rule == FusionRule::mean ? "mean" : "majority"}};
}

inline json to_json(const RunConfig& c) {
  return {{"mode", to_string(c.mode)},   {"weights", to_json(c.weights)}, {"optim", to_json(c.optim)},
          {"fusion", to_json(c.fusion)}, {"images", c.images},            {"labels", c.labels},
          {"out_dir", c.out_dir},        {"seed", c.seed},                {"slice_png", c.slice_png}};
}

inline json to_json(const PhantomSpec& s) {
  json tps = json::array();
  for (const auto& t : s.timepoints)
    tps.push_back({{"translation", t.translation},
                   {"growth", t.growth},
                   {"warp_amplitude", t.warp_amplitude},
                   {"warp_seed", t.warp_seed}});
  json j = {{"dims", s.dims},
            {"spacing", s.spacing},
            {"structure", to_string(s.structure)},
            {"center", s.resolved_center()},
            {"radius", s.radius},
            {"arc_radius", s.arc_radius},
            {"arc_degrees", s.arc_degrees},
            {"edge_width", s.edge_width},
            {"background", s.background},
            {"foreground", s.foreground},
            {"warp_smoothing", s.warp_smoothing},
            {"noise_sigma", s.noise_sigma},
            {"seed", s.seed},
            {"timepoints", tps}};
  return j;
}

namespace detail {

// Reads `key` from `obj` into `out` if present; type errors name the full key path.
template <class T>
void take(const json& obj, const char* key, T& out, const std::string& prefix) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::config, prefix + key, "wrong type for '" + prefix + key + "'");
  }
}

inline void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& prefix) {
  if (!obj.is_object()) throw Error(ErrorCode::config, prefix.empty() ? "config" : prefix.substr(0, prefix.size() - 1),
                                    "expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::config, prefix + it.key(), "unknown configuration key '" + prefix + it.key() + "'");
  }
}

}  // namespace detail

inline void from_json(const json& j, LossWeights& w, const std::string& p = "weights.") {
  detail::only_keys(j, {"lambda1", "lambda2", "alpha", "beta", "gamma", "w"}, p);
  detail::take(j, "lambda1", w.lambda1, p);
  detail::take(j, "lambda2", w.lambda2, p);
  detail::take(j, "alpha", w.alpha, p);
  detail::take(j, "beta", w.beta, p);
  detail::take(j, "gamma", w.gamma, p);
  detail::take(j, "w", w.w, p);
}

inline void from_json(const json& j, OptimConfig& o, const std::string& p = "optim.") {
  detail::only_keys(j, {"learning_rate", "beta1", "beta2", "epsilon", "max_iters", "levels", "tolerance", "window",
                        "squaring_steps", "lambda2_schedule"},
                    p);
  detail::take(j, "learning_rate", o.learning_rate, p);
  detail::take(j, "beta1", o.beta1, p);
  detail::take(j, "beta2", o.beta2, p);
  detail::take(j, "epsilon", o.epsilon, p);
  detail::take(j, "max_iters", o.max_iters, p);
  detail::take(j, "levels", o.levels, p);
  detail::take(j, "tolerance", o.tolerance, p);
  detail::take(j, "window", o.window, p);
  detail::take(j, "squaring_steps", o.integration.squaring_steps, p);
  if (auto it = j.find("lambda2_schedule"); it != j.end()) {
    const std::string q = p + "lambda2_schedule.";
    detail::only_keys(*it, {"enabled", "start", "step", "cap", "iters_per_epoch"}, q);
    detail::take(*it, "enabled", o.lambda2_schedule.enabled, q);
    detail::take(*it, "start", o.lambda2_schedule.start, q);
    detail::take(*it, "step", o.lambda2_schedule.step, q);
    detail::take(*it, "cap", o.lambda2_schedule.cap, q);
    detail::take(*it, "iters_per_epoch", o.lambda2_schedule.iters_per_epoch, q);
  }
}

inline void from_json(const json& j, FusionConfig& f, const std::string& p = "fusion.") {
  detail::only_keys(j, {"threshold", "rule"}, p);
  detail::take(j, "threshold", f.threshold, p);
  std::string rule = f.rule == FusionRule::mean ? "mean" : "majority";
  detail::take(j, "rule", rule, p);
  if (rule == "mean") f.rule = FusionRule::mean;
  else if (rule == "majority") f.rule = FusionRule::majority;
  else throw Error(ErrorCode::config, p + "rule", "rule must be 'mean' or 'majority'");
}

inline RunConfig run_config_from_json(const json& j) {
  detail::only_keys(j, {"mode", "weights", "optim", "fusion", "images", "labels", "out_dir", "seed", "slice_png"}, "");
  RunConfig c;
  std::string mode = to_string(c.mode);
  detail::take(j, "mode", mode, "");
  c.mode = parse_mode(mode);
  if (auto it = j.find("weights"); it != j.end()) from_json(*it, c.weights);
  if (auto it = j.find("optim"); it != j.end()) from_json(*it, c.optim);
  if (auto it = j.find("fusion"); it != j.end()) from_json(*it, c.fusion);
  detail::take(j, "images", c.images, "");
  detail::take(j, "labels", c.labels, "");
  detail::take(j, "out_dir", c.out_dir, "");
  detail::take(j, "seed", c.seed, "");
  detail::take(j, "slice_png", c.slice_png, "");
  return c;
}

}  // namespace config
}  // namespace meanspace
