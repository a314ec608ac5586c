// meanspace command-line interface.
//
//   meanspace phantom        write a synthetic longitudinal series
//   meanspace register       group-wise (mean) or fixed-reference registration
//   meanspace segment        fuse labels in mean space and propagate them back
//   meanspace evaluate       overlap / agreement / percent variation of two masks
//   meanspace bias-protocol  forward vs reversed time-point order comparison
//
// Failures print one JSON object on stderr and exit nonzero.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meanspace/meanspace.hpp"
#include "png.hpp"

namespace ms = meanspace;
using json = nlohmann::json;

namespace {

std::string path_in(const std::string& dir, const std::string& name) { return (std::filesystem::path(dir) / name).string(); }

std::string indexed(const std::string& stem, std::size_t i) { return stem + "_" + std::to_string(i) + ".msv"; }

// Optional flag overrides applied on top of defaults or a --config file.
struct Overrides {
  std::string config_file;
  std::optional<std::string> mode;
  std::optional<double> lambda1, lambda2, alpha, beta, gamma, w, lr, threshold, tolerance;
  std::optional<int> iters, levels, steps;
  std::optional<std::uint64_t> seed;
  bool no_schedule = false;
  bool slice_png = false;
  std::optional<std::string> rule;
  std::vector<std::string> images, labels;
  std::string out_dir;

  void add_to(CLI::App* cmd, bool with_mode) {
    cmd->add_option("--config", config_file, "JSON run configuration (flags override it)");
    if (with_mode) cmd->add_option("--mode", mode, "mean | fixed");
    cmd->add_option("--images", images, "input volumes in time-point order");
    cmd->add_option("--labels", labels, "native label maps, one per image");
    cmd->add_option("--out-dir", out_dir, "output directory");
    cmd->add_option("--lambda1", lambda1, "diffusion weight (mean mode)");
    cmd->add_option("--lambda2", lambda2, "segmentation weight (mean mode); disables the schedule");
    cmd->add_option("--alpha", alpha, "intensity weight (fixed mode)");
    cmd->add_option("--beta", beta, "diffusion weight (fixed mode)");
    cmd->add_option("--gamma", gamma, "label correspondence weight (fixed mode)");
    cmd->add_option("--w", w, "foreground weight of the inner-product metric");
    cmd->add_option("--iters", iters, "maximum iterations per pyramid level");
    cmd->add_option("--levels", levels, "pyramid levels");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--tolerance", tolerance, "relative loss change for convergence");
    cmd->add_option("--steps", steps, "scaling-and-squaring steps");
    cmd->add_option("--threshold", threshold, "binarization threshold");
    cmd->add_option("--rule", rule, "label fusion rule: mean | majority");
    cmd->add_option("--seed", seed, "seed recorded with the run");
    cmd->add_flag("--no-lambda2-schedule", no_schedule, "keep lambda2 constant");
    cmd->add_flag("--slice-png", slice_png, "write axial PNG slices");
  }

  ms::RunConfig resolve() const {
    ms::RunConfig c;
    if (!config_file.empty()) c = ms::config::run_config_from_json(ms::io::read_json(config_file));
    if (mode) c.mode = ms::parse_mode(*mode);
    if (lambda1) c.weights.lambda1 = *lambda1;
    if (lambda2) {
      c.weights.lambda2 = *lambda2;
      c.optim.lambda2_schedule.enabled = false;
    }
    if (no_schedule) c.optim.lambda2_schedule.enabled = false;
    if (alpha) c.weights.alpha = *alpha;
    if (beta) c.weights.beta = *beta;
    if (gamma) c.weights.gamma = *gamma;
    if (w) c.weights.w = *w;
    if (iters) c.optim.max_iters = *iters;
    if (levels) c.optim.levels = *levels;
    if (lr) c.optim.learning_rate = *lr;
    if (tolerance) c.optim.tolerance = *tolerance;
    if (steps) c.optim.integration.squaring_steps = *steps;
    if (threshold) c.fusion.threshold = *threshold;
    if (rule) {
      if (*rule == "mean") c.fusion.rule = ms::FusionRule::mean;
      else if (*rule == "majority") c.fusion.rule = ms::FusionRule::majority;
      else throw ms::Error(ms::ErrorCode::config, "rule", "rule must be 'mean' or 'majority'");
    }
    if (seed) c.seed = *seed;
    if (!images.empty()) c.images = images;
    if (!labels.empty()) c.labels = labels;
    if (!out_dir.empty()) c.out_dir = out_dir;
    if (slice_png) c.slice_png = true;
    c.validate();
    return c;
  }
};

struct Inputs {
  std::vector<ms::Volume> images;
  std::vector<ms::LabelMap> labels;
};

Inputs load_inputs(const ms::RunConfig& c) {
  Inputs in;
  for (const auto& p : c.images) in.images.push_back(ms::io::read_volume(p));
  for (const auto& p : c.labels) in.labels.push_back(ms::io::read_label(p));
  return in;
}

void write_config_echo(const ms::RunConfig& c) {
  ms::io::write_json(path_in(c.out_dir, "config.json"), ms::config::to_json(c));
}

void write_slice(const std::string& path, const ms::Volume& vol, const ms::LabelMap* mask = nullptr) {
  ms::png::write_axial_slice(path, vol, vol.grid.dims[2] / 2, mask);
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string out_dir;
  int n = 2;
  std::vector<int> dims{64};
  std::string structure = "sphere";
  double radius = 8.0;
  std::vector<double> shift{0.0, 0.0, 0.0};
  double growth = 1.0;
  double warp = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

int cmd_phantom(const PhantomArgs& a) {
  ms::PhantomSpec spec;
  if (a.dims.size() == 1) spec.dims = {a.dims[0], a.dims[0], a.dims[0]};
  else if (a.dims.size() == 3) spec.dims = {a.dims[0], a.dims[1], a.dims[2]};
  else throw ms::Error(ms::ErrorCode::config, "dims", "dims takes one or three integers");
  if (a.shift.size() != 3) throw ms::Error(ms::ErrorCode::config, "shift", "shift takes three numbers");
  if (a.n < 1) throw ms::Error(ms::ErrorCode::config, "n", "n must be >= 1");
  spec.structure = ms::parse_structure(a.structure);
  spec.radius = a.radius;
  spec.noise_sigma = a.noise;
  spec.seed = a.seed;
  spec.timepoints.clear();
  for (int t = 0; t < a.n; ++t) {
    ms::TimePointDeformation d;
    for (int k = 0; k < 3; ++k) d.translation[k] = t * a.shift[static_cast<std::size_t>(k)];
    d.growth = std::pow(a.growth, t);
    d.warp_amplitude = a.warp;
    d.warp_seed = a.seed * 7919ULL + static_cast<std::uint64_t>(t) + 1ULL;
    spec.timepoints.push_back(d);
  }
  const ms::PhantomSeries s = ms::make_phantom_series(spec);
  json manifest = {{"images", json::array()}, {"labels", json::array()}, {"ground_truth", json::array()}};
  for (std::size_t t = 0; t < s.images.size(); ++t) {
    const std::string img = path_in(a.out_dir, indexed("image", t));
    const std::string lab = path_in(a.out_dir, indexed("label", t));
    const std::string gt = path_in(a.out_dir, indexed("truth", t));
    ms::io::write_volume(img, s.images[t]);
    ms::io::write_label(lab, s.labels[t]);
    ms::io::write_field(gt, s.ground_truth[t]);
    manifest["images"].push_back(img);
    manifest["labels"].push_back(lab);
    manifest["ground_truth"].push_back(gt);
  }
  ms::io::write_json(path_in(a.out_dir, "phantom.json"), {{"spec", ms::config::to_json(spec)}, {"files", manifest}});
  std::cout << json{{"record", "phantom"}, {"n", a.n}, {"out_dir", a.out_dir}}.dump() << "\n";
  return 0;
}

int cmd_register(const Overrides& o) {
  const ms::RunConfig c = o.resolve();
  Inputs in = load_inputs(c);
  write_config_echo(c);
  std::vector<json> trace;
  json summary = {{"record", "register"}, {"mode", ms::to_string(c.mode)}, {"n", in.images.size()}};

  if (c.mode == ms::Mode::mean) {
    auto sink = [&](const ms::LossRecord& r) { trace.push_back(ms::report::to_json(r)); };
    ms::GroupResult r = ms::register_group(in.images, c.optim, c.weights, in.labels, sink, c.fusion);
    for (std::size_t i = 0; i < in.images.size(); ++i) {
      ms::io::write_field(path_in(c.out_dir, indexed("velocity", i)), r.state.fields[i]);
      ms::io::write_field(path_in(c.out_dir, indexed("forward", i)), r.forward[i].disp);
      ms::io::write_field(path_in(c.out_dir, indexed("inverse", i)), r.inverse[i].disp);
    }
    ms::io::write_volume(path_in(c.out_dir, "mean_image.msv"), r.mean_image);
    if (c.slice_png) {
      write_slice(path_in(c.out_dir, "mean_image.png"), r.mean_image);
      for (std::size_t i = 0; i < in.images.size(); ++i)
        write_slice(path_in(c.out_dir, "warped_" + std::to_string(i) + ".png"), ms::warp_volume(in.images[i], r.forward[i]));
    }
    summary["iterations"] = r.state.iteration;
    summary["mean_velocity_norm"] = r.mean_velocity_norm;
    summary["loss"] = ms::report::to_json(r.report);
  } else {
    const ms::Volume& target = in.images.front();
    std::vector<ms::VectorField> fields{ms::VectorField(target.grid)};
    ms::io::write_field(path_in(c.out_dir, indexed("velocity", 0)), fields.front());
    ms::io::write_field(path_in(c.out_dir, indexed("forward", 0)), fields.front());
    ms::io::write_field(path_in(c.out_dir, indexed("inverse", 0)), fields.front());
    json per_image = json::array();
    for (std::size_t i = 1; i < in.images.size(); ++i) {
      auto sink = [&](const ms::LossRecord& rec) {
        json j = ms::report::to_json(rec);
        j["image"] = i;
        trace.push_back(std::move(j));
      };
      const ms::LabelMap* ml = in.labels.empty() ? nullptr : &in.labels[i];
      const ms::LabelMap* tl = in.labels.empty() ? nullptr : &in.labels[0];
      ms::FixedResult r = ms::register_fixed(in.images[i], target, c.optim, c.weights, ml, tl, sink);
      ms::io::write_field(path_in(c.out_dir, indexed("velocity", i)), r.field);
      ms::io::write_field(path_in(c.out_dir, indexed("forward", i)), r.forward.disp);
      ms::io::write_field(path_in(c.out_dir, indexed("inverse", i)), r.inverse.disp);
      if (c.slice_png)
        write_slice(path_in(c.out_dir, "warped_" + std::to_string(i) + ".png"), ms::warp_volume(in.images[i], r.forward));
      per_image.push_back({{"image", i}, {"loss", ms::report::to_json(r.report)}});
      fields.push_back(std::move(r.field));
    }
    ms::io::write_volume(path_in(c.out_dir, "reference_image.msv"), target);
    if (c.slice_png) write_slice(path_in(c.out_dir, "reference_image.png"), target);
    summary["mean_velocity_norm"] = ms::mean_velocity_norm(fields);
    summary["per_image"] = per_image;
  }
  ms::io::write_jsonl(path_in(c.out_dir, "trace.jsonl"), trace);
  ms::io::write_jsonl(path_in(c.out_dir, "report.jsonl"), {summary});
  std::cout << summary.dump() << "\n";
  return 0;
}

struct SegmentArgs {
  std::vector<std::string> labels, forward, inverse;
  std::string out_dir = ".";
  std::string reference;
  double threshold = 0.5;
  std::string rule = "mean";
  bool slice_png = false;
};

int cmd_segment(const SegmentArgs& a) {
  ms::FusionConfig fusion;
  fusion.threshold = a.threshold;
  if (a.rule == "majority") fusion.rule = ms::FusionRule::majority;
  else if (a.rule != "mean") throw ms::Error(ms::ErrorCode::config, "rule", "rule must be 'mean' or 'majority'");
  fusion.validate();
  if (a.labels.empty()) throw ms::Error(ms::ErrorCode::config, "labels", "at least one label map is required");
  if (a.forward.size() != a.labels.size())
    throw ms::Error(ms::ErrorCode::config, "forward", "give one forward transform per label map");
  if (a.inverse.size() != a.labels.size())
    throw ms::Error(ms::ErrorCode::config, "inverse", "give one inverse transform per label map");
  std::vector<ms::LabelMap> labels;
  std::vector<ms::Transform> fwd, inv;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    labels.push_back(ms::io::read_label(a.labels[i]));
    fwd.push_back({ms::io::read_field(a.forward[i]), ms::Direction::forward});
    inv.push_back({ms::io::read_field(a.inverse[i]), ms::Direction::inverse});
  }
  ms::io::write_json(path_in(a.out_dir, "config.json"),
                     {{"labels", a.labels}, {"forward", a.forward}, {"inverse", a.inverse}, {"out_dir", a.out_dir},
                      {"reference", a.reference}, {"fusion", ms::config::to_json(fusion)}, {"slice_png", a.slice_png}});
  const ms::MeanSpaceSegmentation seg = ms::fuse_mean_space(labels, fwd, fusion);
  const std::vector<ms::LabelMap> masks = ms::propagate(seg.probabilistic, inv, fusion);
  ms::io::write_label(path_in(a.out_dir, "sbar_prob.msv"), seg.probabilistic);
  ms::io::write_label(path_in(a.out_dir, "sbar.msv"), seg.binary);
  json volumes = json::array();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    ms::io::write_label(path_in(a.out_dir, indexed("mask", i)), masks[i]);
    volumes.push_back(ms::mask_stats(ms::as_volume(masks[i]), masks[i]).volume);
  }
  if (a.slice_png && !a.reference.empty()) {
    const ms::Volume ref = ms::io::read_volume(a.reference);
    write_slice(path_in(a.out_dir, "sbar_overlay.png"), ref, &seg.binary);
  }
  json summary = {{"record", "segment"},
                  {"n", masks.size()},
                  {"sbar_volume", ms::mask_stats(ms::as_volume(seg.binary), seg.binary).volume},
                  {"mask_volumes", volumes}};
  if (masks.size() >= 2) summary["consistency_dice"] = ms::mean_space_consistency_dice(masks, fwd, fusion.threshold);
  ms::io::write_jsonl(path_in(a.out_dir, "report.jsonl"), {summary});
  std::cout << summary.dump() << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string a, b, image, out_dir;
};

int cmd_evaluate(const EvaluateArgs& e) {
  const ms::LabelMap a = ms::binarize(ms::io::read_label(e.a));
  const ms::LabelMap b = ms::binarize(ms::io::read_label(e.b));
  ms::require_same_grid(a.grid, b.grid, "masks");
  json out = {{"record", "evaluate"}, {"dice", ms::dice(a, b)}, {"kappa", ms::cohens_kappa(a, b)}};
  const ms::Volume vol = e.image.empty() ? ms::as_volume(a) : ms::io::read_volume(e.image);
  const ms::MaskStats sa = ms::mask_stats(vol, a), sb = ms::mask_stats(vol, b);
  out["volume_a"] = sa.volume;
  out["volume_b"] = sb.volume;
  out["eps_volume"] = sa.volume + sb.volume == 0.0 ? json(nullptr) : json(ms::percent_variation(sa.volume, sb.volume));
  if (!e.image.empty()) {
    out["intensity_a"] = sa.mean_intensity ? json(*sa.mean_intensity) : json(nullptr);
    out["intensity_b"] = sb.mean_intensity ? json(*sb.mean_intensity) : json(nullptr);
    out["eps_intensity"] = sa.mean_intensity && sb.mean_intensity && *sa.mean_intensity + *sb.mean_intensity != 0.0
                               ? json(ms::percent_variation(*sa.mean_intensity, *sb.mean_intensity))
                               : json(nullptr);
  }
  if (!e.out_dir.empty()) ms::io::write_jsonl(path_in(e.out_dir, "evaluate.jsonl"), {out});
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_bias(const Overrides& o, const std::string& method_name) {
  const ms::Method method = ms::parse_method(method_name);
  const ms::RunConfig c = o.resolve();
  if (c.labels.size() != c.images.size())
    throw ms::Error(ms::ErrorCode::config, "labels", "the bias protocol needs one label map per image");
  Inputs in = load_inputs(c);
  json echo = ms::config::to_json(c);
  echo["method"] = method_name;
  ms::io::write_json(path_in(c.out_dir, "config.json"), echo);
  ms::ProtocolConfig pc{c.optim, c.weights, c.fusion, true};
  const ms::BiasReport rep = ms::run_bias_protocol(in.images, in.labels, method, pc);
  const auto records = ms::report::to_records(rep);
  ms::io::write_jsonl(path_in(c.out_dir, "bias_report.jsonl"), records);
  std::cout << records.front().dump() << "\n";
  return 0;
}

int exit_code_for(ms::ErrorCode c) {
  switch (c) {
    case ms::ErrorCode::usage:
    case ms::ErrorCode::config:
    case ms::ErrorCode::invalid_argument:
    case ms::ErrorCode::count_mismatch:
    case ms::ErrorCode::grid_mismatch: return 2;
    case ms::ErrorCode::io_open:
    case ms::ErrorCode::io_magic:
    case ms::ErrorCode::io_version:
    case ms::ErrorCode::io_dtype:
    case ms::ErrorCode::io_dims:
    case ms::ErrorCode::io_payload:
    case ms::ErrorCode::io_domain:
    case ms::ErrorCode::io_header: return 3;
    case ms::ErrorCode::divergence:
    case ms::ErrorCode::undefined_measure:
    case ms::ErrorCode::empty_mask: return 4;
  }
  return 1;
}

void emit_error(std::string_view code, const std::string& field, const std::string& message) {
  std::cerr << json{{"error", code}, {"field", field}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  ms::configure_workers_from_env();
  CLI::App app{"Group-wise mean-space registration and consistent segmentation"};
  app.require_subcommand(1, 1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "write a synthetic longitudinal series");
  phantom->add_option("--out-dir", pa.out_dir, "output directory")->required();
  phantom->add_option("--n", pa.n, "number of time-points");
  phantom->add_option("--dims", pa.dims, "grid size (one or three integers)");
  phantom->add_option("--structure", pa.structure, "sphere | cshape");
  phantom->add_option("--radius", pa.radius, "sphere or tube radius in voxels");
  phantom->add_option("--shift", pa.shift, "translation added per time-point (x y z voxels)")->expected(3);
  phantom->add_option("--growth", pa.growth, "radial growth factor per time-point");
  phantom->add_option("--warp", pa.warp, "smooth random warp amplitude in voxels");
  phantom->add_option("--noise", pa.noise, "additive Gaussian noise sigma");
  phantom->add_option("--seed", pa.seed, "random seed");

  Overrides ro;
  auto* reg = app.add_subcommand("register", "register a group of images");
  ro.add_to(reg, true);

  SegmentArgs sa;
  auto* seg = app.add_subcommand("segment", "fuse labels in mean space and propagate the result");
  seg->add_option("--labels", sa.labels, "native label maps")->required();
  seg->add_option("--forward", sa.forward, "forward displacement fields (mean -> native)")->required();
  seg->add_option("--inverse", sa.inverse, "inverse displacement fields (native -> mean)")->required();
  seg->add_option("--out-dir", sa.out_dir, "output directory");
  seg->add_option("--reference", sa.reference, "mean-space image for PNG overlays");
  seg->add_option("--threshold", sa.threshold, "binarization threshold");
  seg->add_option("--rule", sa.rule, "mean | majority");
  seg->add_flag("--slice-png", sa.slice_png, "write an axial PNG overlay (needs --reference)");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "compare two masks");
  ev->add_option("--a", ea.a, "first mask")->required();
  ev->add_option("--b", ea.b, "second mask")->required();
  ev->add_option("--image", ea.image, "volume for mask-mean intensities");
  ev->add_option("--out-dir", ea.out_dir, "also write evaluate.jsonl here");

  Overrides bo;
  std::string method = "mean";
  auto* bias = app.add_subcommand("bias-protocol", "run a method in forward and reversed time-point order");
  bias->add_option("--method", method, "mean | fixed | dilation | translation");
  bo.add_to(bias, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error("usage", "", e.what());
    return 2;
  }

  try {
    if (phantom->parsed()) return cmd_phantom(pa);
    if (reg->parsed()) return cmd_register(ro);
    if (seg->parsed()) return cmd_segment(sa);
    if (ev->parsed()) return cmd_evaluate(ea);
    if (bias->parsed()) return cmd_bias(bo, method);
  } catch (const ms::Error& e) {
    emit_error(ms::to_string(e.code()), e.field(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    emit_error("internal", "", e.what());
    return 1;
  }
  return 1;
}
