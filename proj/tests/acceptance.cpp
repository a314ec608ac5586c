// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only 1,5,...] [--cli PATH]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "support.hpp"

using namespace mst;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1, 5, 8: full-size groups registered with the default configuration.

struct DefaultRun {
  PhantomSeries series;
  GroupResult result;
  double seconds = 0.0;
};

PhantomSpec full_size_spec(int n) {
  PhantomSpec s;
  s.radius = 10.0;
  s.timepoints.assign(static_cast<std::size_t>(n), TimePointDeformation{});
  if (n == 2) {
    s.timepoints[1].translation = {1.6, -0.9, 1.2};
  } else {
    const Vec3 shifts[3] = {{-0.8, 0.5, 0.0}, {0.6, 0.0, -1.1}, {0.3, -0.7, 0.9}};
    for (int t = 0; t < n; ++t) {
      s.timepoints[static_cast<std::size_t>(t)].translation = shifts[t];
      s.timepoints[static_cast<std::size_t>(t)].warp_amplitude = 1.5;
      s.timepoints[static_cast<std::size_t>(t)].warp_seed = 100 + static_cast<std::uint64_t>(t);
    }
    s.structure = Structure::cshape;
    s.radius = 4.0;
    s.arc_radius = 14.0;
  }
  s.noise_sigma = 0.01;
  s.seed = static_cast<std::uint64_t>(n);
  return s;
}

const DefaultRun& default_run(int n) {
  static std::map<int, DefaultRun> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  DefaultRun r;
  r.series = make_phantom_series(full_size_spec(n));
  const auto t0 = std::chrono::steady_clock::now();
  r.result = register_group(r.series.images, OptimConfig{}, LossWeights{});
  r.seconds = seconds_since(t0);
  return cache.emplace(n, std::move(r)).first->second;
}

Outcome centrality() {
  Outcome o{true, ""};
  for (int n : {2, 3}) {
    const DefaultRun& r = default_run(n);
    const bool ok = r.result.mean_velocity_norm <= 1e-15 && r.seconds <= 300.0;
    o.pass = o.pass && ok;
    o.detail += fmt("n=%d: |vbar|^2=%.3e in %.0fs (%d iterations); ", n, r.result.mean_velocity_norm, r.seconds,
                    r.result.state.iteration);
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2

Outcome projection_algebra() {
  std::mt19937_64 rng(2024);
  int bad_idem = 0, bad_sum = 0, bad_diff = 0;
  double worst_sum = 0.0, worst_diff = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> dim(2, 5), cnt(1, 6);
    const GridSpec g(dim(rng), dim(rng), dim(rng));
    const int n = cnt(rng);
    const double amp = std::pow(10.0, std::uniform_real_distribution<double>(-3.0, 1.0)(rng));
    std::vector<VectorField> v;
    for (int i = 0; i < n; ++i) v.push_back(random_field(g, rng, amp));
    const auto p = project_constraint(v);
    const auto pp = project_constraint(p);
    for (int i = 0; i < n; ++i)
      if (pp[static_cast<std::size_t>(i)].data != p[static_cast<std::size_t>(i)].data) {
        ++bad_idem;
        break;
      }
    double s_max = 0.0, d_max = 0.0;
    for (std::size_t k = 0; k < p[0].data.size(); ++k) {
      double s = 0.0;
      for (const auto& f : p) s += f.data[k];
      s_max = std::max(s_max, std::abs(s));
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
          d_max = std::max(d_max, std::abs((p[a].data[k] - p[b].data[k]) - (v[a].data[k] - v[b].data[k])));
        }
    }
    bad_sum += s_max > 1e-12;
    bad_diff += d_max > 1e-12;
    worst_sum = std::max(worst_sum, s_max);
    worst_diff = std::max(worst_diff, d_max);
  }
  return {bad_idem + bad_sum + bad_diff == 0,
          fmt("1000 cases: idempotence failures %d, max |sum| %.2e, max pairwise-difference change %.2e", bad_idem,
              worst_sum, worst_diff)};
}

// ---------------------------------------------------------------------------
// 3

Outcome gradient_suite() {
  std::mt19937_64 rng(33);
  const GridSpec g(5, 5, 5);
  const double tol = 1e-3;
  std::map<std::string, double> worst;
  std::map<std::string, int> fails;
  auto record = [&](const std::string& term, double err) {
    worst[term] = std::max(worst[term], err);
    fails[term] += err > tol;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 2;
    std::vector<Volume> im;
    std::vector<LabelMap> lb;
    for (int i = 0; i < n; ++i) {
      im.push_back(random_volume(g, rng));
      lb.push_back(random_mask(g, rng));
    }
    const LabelMap sbar = random_probabilities(g, rng);

    // reg with respect to the warped images
    {
      const RegTerm t = reg_term(im, true);
      std::vector<double> num;
      const double h = 1e-6;
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < im[0].data.size(); ++k) {
          auto p = im, m = im;
          p[static_cast<std::size_t>(i)].data[k] += h;
          m[static_cast<std::size_t>(i)].data[k] -= h;
          num.push_back((loss_reg(p) - loss_reg(m)) / (2 * h));
        }
      std::vector<double> ana;
      for (const auto& gi : t.gradient) ana.insert(ana.end(), gi.data.begin(), gi.data.end());
      record("reg", relative_error(ana, num));
    }
    // def
    {
      const auto fs = [&] {
        std::vector<VectorField> f;
        for (int i = 0; i < n; ++i) f.push_back(random_field(g, rng, 1.0));
        return f;
      }();
      std::vector<VectorField> ana;
      for (const auto& f : fs) ana.push_back(diffusion_gradient(f, 1.0 / n));
      const auto num = numeric_gradient(fs, [](const std::vector<VectorField>& p) { return loss_def(p); });
      record("def", relative_error(flatten(ana), flatten(num)));
    }
    // seg through the inverse transforms; constant images remove the reg term
    {
      std::vector<Volume> flat(static_cast<std::size_t>(n), Volume(g, 0.5));
      GroupProblem prob{flat, lb, &sbar, {}, {}};
      prob.weights.lambda1 = 0.0;
      prob.weights.lambda2 = 1.0;
      std::vector<VectorField> fs;
      for (int i = 0; i < n; ++i) fs.push_back(random_field(g, rng, 0.6));
      const GroupEvaluation ev = loss_total_group(prob, fs, true);
      const auto num = numeric_gradient(fs, [&](const std::vector<VectorField>& p) {
        return loss_total_group(prob, p, false).report.seg;
      });
      record("seg", relative_error(flatten(ev.gradient), flatten(num)));
    }
    // fixed-reference objective
    {
      FixedProblem prob{&im[0], &im[1], &lb[0], &lb[1], {}, {}};
      const VectorField v = random_field(g, rng, 0.6);
      const FixedEvaluation ev = loss_total_fixed(prob, v, true);
      const auto num = numeric_gradient({v}, [&](const std::vector<VectorField>& p) {
        return loss_total_fixed(prob, p[0], false).report.total;
      });
      record("fixed", relative_error(ev.gradient.data, num[0]));
    }
    // full chain: projection, integration, warp, reg + def + seg
    {
      GroupProblem prob{im, lb, &sbar, {}, {}};
      prob.weights.lambda1 = 0.2;
      prob.weights.lambda2 = 0.5;
      std::vector<VectorField> fs;
      for (int i = 0; i < n; ++i) fs.push_back(random_field(g, rng, 0.6));
      const GroupEvaluation ev = loss_total_group(prob, fs, true);
      const auto num = numeric_gradient(fs, [&](const std::vector<VectorField>& p) {
        return loss_total_group(prob, p, false).report.total;
      });
      record("chain", relative_error(flatten(ev.gradient), flatten(num)));
    }
  }
  bool pass = true;
  std::string d = "100 cases each, max relative error:";
  for (const auto& [term, err] : worst) {
    pass = pass && fails[term] == 0;
    d += fmt(" %s %.1e", term.c_str(), err);
  }
  return {pass, d};
}

// ---------------------------------------------------------------------------
// 4

Outcome diffeomorphism_suite() {
  bool identity_ok = true;
  for (int steps : {0, 1, 6, 10}) {
    IntegrationConfig c;
    c.squaring_steps = steps;
    const Transform t = integrate_svf(VectorField(GridSpec(9, 7, 5)), c);
    for (double x : t.disp.data) identity_ok = identity_ok && x == 0.0;
  }
  // Suite residual per step count: the worst field at that step count.
  const GridSpec g(32, 32, 32);
  std::vector<double> suite(9, 0.0);
  int field_steps_up = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const VectorField v = smooth_random_field(g, 3.0, 4.0, seed);
    double prev = 1e300;
    for (int steps = 2; steps <= 8; ++steps) {
      IntegrationConfig c;
      c.squaring_steps = steps;
      const Transform r = compose(integrate_svf(v, c), invert(v, c));
      const double res = displacement_stats(r.disp, 4).max_norm;
      field_steps_up += res >= prev;
      prev = res;
      suite[static_cast<std::size_t>(steps)] = std::max(suite[static_cast<std::size_t>(steps)], res);
    }
  }
  bool mono = true;
  std::string trail;
  for (int steps = 2; steps <= 8; ++steps) {
    if (steps > 2) mono = mono && suite[static_cast<std::size_t>(steps)] < suite[static_cast<std::size_t>(steps - 1)];
    trail += fmt(" %.4f", suite[static_cast<std::size_t>(steps)]);
  }
  const double worst = suite[6];
  return {identity_ok && worst <= 0.15 && mono,
          fmt("integrate(0) exact: %s; worst residual at 6 steps %.4f voxel over 5 fields with |v|max 3; "
              "suite residual for steps 2..8:%s (%s); single-field step increases at the interpolation floor: %d",
              identity_ok ? "yes" : "no", worst, trail.c_str(), mono ? "decreasing" : "not decreasing",
              field_steps_up)};
}

// ---------------------------------------------------------------------------
// 5

Outcome consistency() {
  bool pass = true;
  std::string d;
  for (int n : {2, 3}) {
    const DefaultRun& r = default_run(n);
    const MeanSpaceSegmentation seg = fuse_mean_space(r.series.labels, r.result.forward);
    // Mean-space view of every time-point along the probabilistic pathway.
    std::vector<LabelMap> direct(static_cast<std::size_t>(n), binarize(seg.probabilistic));
    const double d_direct = min_pairwise_dice(direct);
    // Binarized native masks, warped forward with linear interpolation and binarized again.
    const auto native = propagate(seg.probabilistic, r.result.inverse);
    std::vector<LabelMap> round;
    double vs_sbar = 1.0;
    for (int i = 0; i < n; ++i) {
      round.push_back(binarize(warp_labels(native[static_cast<std::size_t>(i)], r.result.forward[static_cast<std::size_t>(i)])));
      vs_sbar = std::min(vs_sbar, dice(round.back(), seg.binary));
    }
    const double d_round = std::min(min_pairwise_dice(round), vs_sbar);
    pass = pass && d_direct == 1.0 && d_round >= 0.99;
    d += fmt("n=%d: pre-binarization Dice %.4f, round trip Dice %.4f; ", n, d_direct, d_round);
  }
  return {pass, d};
}

// ---------------------------------------------------------------------------
// 6

PhantomSeries bias_group(int idx) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(7000 + idx));
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  PhantomSpec s;
  s.dims = {16, 16, 16};
  const int n = 2 + idx % 2;
  if (idx % 4 < 2) {
    s.structure = Structure::sphere;
    s.radius = std::uniform_real_distribution<double>(3.5, 4.5)(rng);
  } else {
    s.structure = Structure::cshape;
    s.radius = 2.0;
    s.arc_radius = std::uniform_real_distribution<double>(4.2, 4.8)(rng);
  }
  s.timepoints.assign(static_cast<std::size_t>(n), TimePointDeformation{});
  for (int t = 0; t < n; ++t) {
    auto& tp = s.timepoints[static_cast<std::size_t>(t)];
    tp.translation = {u(rng), u(rng), u(rng)};
    tp.warp_amplitude = 0.8;
    tp.warp_seed = static_cast<std::uint64_t>(idx * 10 + t + 1);
  }
  s.noise_sigma = 0.02;
  s.seed = static_cast<std::uint64_t>(idx);
  return make_phantom_series(s);
}

Outcome directional_bias() {
  const int groups = 50;
  ProtocolConfig pc;
  pc.optim.max_iters = 80;
  pc.optim.levels = 2;
  int wins = 0;
  double kappa[4] = {0, 0, 0, 0};
  for (int gi = 0; gi < groups; ++gi) {
    const PhantomSeries s = bias_group(gi);
    BiasReport r[4];
    for (int m = 0; m < 4; ++m) r[m] = run_bias_protocol(s.images, s.labels, static_cast<Method>(m), pc);
    wins += r[0].kappa > r[1].kappa && std::abs(r[0].eps_volume) < std::abs(r[1].eps_volume);
    for (int m = 0; m < 4; ++m) kappa[m] += r[m].kappa / groups;
  }
  const double mean = kappa[0], fixed = kappa[1], dil = kappa[2], tr = kappa[3];
  const bool order = mean > fixed && fixed > tr && tr > dil;
  const bool pass = wins >= 45 && order;
  return {pass, fmt("Mean beats Fixed on kappa and |eps_volume| in %d/%d groups; mean kappa %%: Mean %.2f, Fixed %.2f, "
                    "Translation %.2f, Dilation %.2f",
                    wins, groups, mean, fixed, tr, dil)};
}

// ---------------------------------------------------------------------------
// 7

Outcome metric_oracles() {
  std::mt19937_64 rng(77);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_real_distribution<double> sp(0.5, 2.0), pr(0.0, 1.0);
    const GridSpec g(8, 8, 8, {sp(rng), sp(rng), sp(rng)});
    const double pa = trial % 20 == 0 ? 0.0 : pr(rng), pb = trial % 25 == 0 ? 1.0 : pr(rng);
    const LabelMap a = random_mask(g, rng, pa), b = random_mask(g, rng, pb);
    const Volume img = random_volume(g, rng, -1.0, 1.0);

    long both = 0, na = 0, nb = 0, agree = 0;
    double sum_a = 0.0;
    for (int z = 0; z < 8; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const bool ia = a.at(x, y, z) == 1.0, ib = b.at(x, y, z) == 1.0;
          both += ia && ib;
          na += ia;
          nb += ib;
          agree += ia == ib;
          if (ia) sum_a += img.at(x, y, z);
        }
    const double N = 512.0;
    const double dice_ref = na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
    const double po = static_cast<double>(agree) / N;
    const double qa = static_cast<double>(na) / N, qb = static_cast<double>(nb) / N;
    const double pe = qa * qb + (1.0 - qa) * (1.0 - qb);
    const double kappa_ref = pe == 1.0 ? 1.0 : (po - pe) / (1.0 - pe);
    const double vol_a = static_cast<double>(na) * g.spacing[0] * g.spacing[1] * g.spacing[2];
    const double vol_b = static_cast<double>(nb) * g.spacing[0] * g.spacing[1] * g.spacing[2];

    mismatches += dice(a, b) != dice_ref;
    mismatches += cohens_kappa(a, b) != kappa_ref;
    const MaskStats s = mask_stats(img, a);
    mismatches += s.volume != vol_a || s.count != na;
    if (na > 0) mismatches += s.mean() != sum_a / static_cast<double>(na);
    if (vol_a + vol_b != 0.0)
      mismatches += percent_variation(vol_a, vol_b) != (vol_b - vol_a) / (0.5 * (vol_b + vol_a)) * 100.0;
  }
  return {mismatches == 0, fmt("200 random 8^3 cases, %d mismatches against loop oracles", mismatches)};
}

// ---------------------------------------------------------------------------
// 8

Outcome recovery() {
  const DefaultRun& r = default_run(2);
  const PhantomSpec spec = full_size_spec(2);
  const MeanSpaceSegmentation seg = fuse_mean_space(r.series.labels, r.result.forward);
  const Vec3 c = mask_centroid(seg.binary);
  const Vec3 u0 = sample_linear(r.result.forward[0].disp, c), u1 = sample_linear(r.result.forward[1].disp, c);
  double err = 0.0;
  for (int a = 0; a < 3; ++a)
    err = std::max(err, std::abs((u1[a] - u0[a]) - (spec.timepoints[1].translation[a] - spec.timepoints[0].translation[a])));

  PhantomSpec gs;
  gs.dims = {40, 40, 40};
  gs.radius = 8.0;
  gs.timepoints[1].growth = 1.12;
  const PhantomSeries gp = make_phantom_series(gs);
  OptimConfig oc;
  oc.levels = 2;
  const GroupResult gr = register_group(gp.images, oc, LossWeights{});
  const MeanSpaceSegmentation gseg = fuse_mean_space(gp.labels, gr.forward);
  const auto masks = propagate(gseg.probabilistic, gr.inverse);
  const double est = mask_stats(gp.images[1], masks[1]).volume / mask_stats(gp.images[0], masks[0]).volume;
  const double truth = 1.12 * 1.12 * 1.12;
  const double rel = std::abs(est / truth - 1.0);
  return {err <= 0.25 && rel <= 0.05,
          fmt("shift error at centroid %.3f voxel; growth volume ratio %.4f vs %.4f (%.2f%%)", err, est, truth,
              100.0 * rel)};
}

// ---------------------------------------------------------------------------
// 9

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto b = io::detail::read_all(e.path().string());
    out[fs::relative(e.path(), dir).string()] = std::string(b.begin(), b.end());
  }
  return out;
}

Outcome determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not found: " + cli};
  const fs::path dir = fs::temp_directory_path() / ("meanspace_determinism_" + std::to_string(::getpid()));
  const std::string d = dir.string();
  const std::string pipeline =
      cli + " phantom --out-dir " + d + "/ph --n 3 --dims 20 --radius 5 --shift 0.7 -0.4 0.3 --warp 1 --noise 0.02 --seed 5"
      " > /dev/null && " +
      cli + " register --images " + d + "/ph/image_0.msv " + d + "/ph/image_1.msv " + d + "/ph/image_2.msv" +
      " --labels " + d + "/ph/label_0.msv " + d + "/ph/label_1.msv " + d + "/ph/label_2.msv" +
      " --out-dir " + d + "/reg --iters 25 --levels 2 --seed 5 --slice-png > /dev/null && " +
      cli + " segment --labels " + d + "/ph/label_0.msv " + d + "/ph/label_1.msv " + d + "/ph/label_2.msv" +
      " --forward " + d + "/reg/forward_0.msv " + d + "/reg/forward_1.msv " + d + "/reg/forward_2.msv" +
      " --inverse " + d + "/reg/inverse_0.msv " + d + "/reg/inverse_1.msv " + d + "/reg/inverse_2.msv" +
      " --reference " + d + "/reg/mean_image.msv --slice-png --out-dir " + d + "/seg > /dev/null && " +
      cli + " bias-protocol --method fixed --images " + d + "/ph/image_0.msv " + d + "/ph/image_1.msv" +
      " --labels " + d + "/ph/label_0.msv " + d + "/ph/label_1.msv --iters 15 --levels 1 --out-dir " + d + "/bias > /dev/null";
  std::map<std::string, std::string> runs[2];
  const char* threads[2] = {"1", "4"};
  for (int k = 0; k < 2; ++k) {
    fs::remove_all(dir);
    const std::string cmd = std::string("MEANSPACE_THREADS=") + threads[k] + " sh -c '" + pipeline + "'";
    if (std::system(cmd.c_str()) != 0) {
      fs::remove_all(dir);
      return {false, fmt("pipeline failed with MEANSPACE_THREADS=%s", threads[k])};
    }
    runs[k] = snapshot(dir);
  }
  fs::remove_all(dir);
  int differ = 0;
  for (const auto& [name, bytes] : runs[0]) {
    auto it = runs[1].find(name);
    differ += it == runs[1].end() || it->second != bytes;
  }
  differ += static_cast<int>(runs[1].size() > runs[0].size());
  const bool pass = differ == 0 && !runs[0].empty();
  return {pass, fmt("%zu output files from phantom/register/segment/bias-protocol, %d differ between 1 and 4 workers",
                    runs[0].size(), differ)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string cli = MEANSPACE_CLI;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--cli PATH]\n");
      return 2;
    }
  }
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"centrality of the implicit reference", centrality},
      {"projection algebra", projection_algebra},
      {"gradients against finite differences", gradient_suite},
      {"diffeomorphism suite", diffeomorphism_suite},
      {"segmentation consistency", consistency},
      {"directional processing bias", directional_bias},
      {"metric oracles", metric_oracles},
      {"translation and growth recovery", recovery},
      {"determinism across worker counts", [&] { return determinism(cli); }},
  };
  int failed = 0;
  for (int k = 0; k < 9; ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%s) [%.0fs]\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
