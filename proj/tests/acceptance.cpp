// One line per acceptance criterion; exit status 1 if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "restv2/attention.hpp"
#include "restv2/branches.hpp"
#include "restv2/cka.hpp"
#include "restv2/flop_tally.hpp"
#include "restv2/flops.hpp"
#include "restv2/grad_suite.hpp"
#include "restv2/model.hpp"
#include "restv2/ops.hpp"
#include "restv2/params.hpp"
#include "restv2/spectrum.hpp"

using namespace restv2;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

TensorD randn(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = d(rng);
  return TensorD(std::move(shape), std::move(v));
}

bool same(const TensorD& a, const TensorD& b) { return a.shape() == b.shape() && a.values() == b.values(); }

double millions(const char* name) { return count_params(preset(name)).total / 1e6; }

void params_criterion(Outcome& o) {
  struct Row {
    const char* label;
    const char* preset;
    double published;
  };
  const Row rows[] = {{"T", "restv2-t", 30.43},          {"T w/o upsample", "restv2-t-wo-up", 30.26},
                      {"PE none", "restv2-t-nope", 30.42}, {"PE ape", "restv2-t-ape", 30.98},
                      {"PE rpe", "restv2-t-rpe", 30.48},   {"PE pa", "restv2-t", 30.43},
                      {"ConvNet", "convnet", 26.11},        {"ConvNetv2", "convnetv2", 26.67},
                      {"L", "restv2-l", 87.0}};
  double worst = 0;
  const char* worst_label = "";
  for (const auto& r : rows) {
    const double rel = (millions(r.preset) - r.published) / r.published;
    if (std::abs(rel) > worst) {
      worst = std::abs(rel);
      worst_label = r.label;
    }
    o.require(std::abs(rel) <= 0.02, r.label);
  }
  // the gap of every anchor is itemized per parameter group
  for (const auto& row : reconcile_params()) {
    long long itemized = 0;
    for (const auto& g : row.delta_vs_reference) itemized += g.delta;
    const auto reference = static_cast<long long>(count_params(preset("restv2-t")).total);
    o.require(itemized == static_cast<long long>(row.breakdown.total) - reference, row.anchor.label + " itemization");
  }
  o.detail << "worst relative gap " << worst * 100 << "% (" << worst_label << ", tolerance 2%) over " << std::size(rows)
           << " anchors; per-group deltas itemized for " << reconcile_params().size() << " rows";
}

void flops_criterion(Outcome& o) {
  struct Row {
    const char* preset;
    double published;
  };
  const Row rows[] = {{"restv2-t", 4.1}, {"restv2-s", 6.0}, {"restv2-b", 7.9}, {"restv2-l", 13.8}};
  double worst = 0;
  for (const auto& r : rows) {
    const double g = count_flops(preset(r.preset), {224, 224}).total() / 1e9;
    const double rel = (g - r.published) / r.published;
    worst = std::max(worst, std::abs(rel));
    o.require(std::abs(rel) <= 0.05, r.preset);
    o.detail << r.preset << "=" << g << "G ";
  }
  const auto ps = count_flops(preset("restv2-t"), {224, 224}).total();
  const auto wo = count_flops(preset("restv2-t-wo-up"), {224, 224}).total();
  o.require(ps > wo, "pixel-shuffle adds FLOPs over w/o");
  o.detail << "worst " << worst * 100 << "% (tolerance 5%); pixel-shuffle minus w/o = " << (ps - wo) / 1e9 << "G";
}

void window_criterion(Outcome& o) {
  const auto cfg = preset("restv2-t");
  const Spatial g{800, 1216};
  const auto global = window_style_flops(cfg, WindowStyle::global, g);
  const auto win = window_style_flops(cfg, WindowStyle::win, g);
  const auto hwin = window_style_flops(cfg, WindowStyle::hwin, g);
  const auto cwin = window_style_flops(cfg, WindowStyle::cwin, g);
  o.require(global.matmul_flops > hwin.matmul_flops && hwin.matmul_flops > win.matmul_flops,
            "matmul global > hwin > win");
  o.require(win.linear_flops >= global.linear_flops, "linear win >= global");
  std::uint64_t dw = 0;
  const auto e = stage_extents(cfg, g);
  for (std::size_t s = 0; s < kStages; ++s) dw += 49ull * cfg.stage_channels(s) * e[s].height * e[s].width;
  o.require(cwin.conv_flops - win.conv_flops == dw, "cwin - win conv == 7x7 depth-wise cost");
  o.detail << "matmul G/H/W = " << global.matmul_flops / 1e9 << "/" << hwin.matmul_flops / 1e9 << "/"
           << win.matmul_flops / 1e9 << "G, linear W/G = " << win.linear_flops / 1e9 << "/"
           << global.linear_flops / 1e9 << "G, cwin conv delta " << cwin.conv_flops - win.conv_flops
           << " (closed form " << dw << ")";
}

void gradient_criterion(Outcome& o) {
  const auto ops = op_gradient_suite(42);
  const double op_err = suite_max_error(ops);
  const auto mini = mini_model_gradcheck(42, 16);
  const double mini_err = mini.result.max_rel_error();
  o.require(op_err < 1e-4, "op suite");
  o.require(mini_err < 1e-4, "miniature model");
  std::size_t probed = 0;
  for (const auto& entry : mini.result.entries) probed += entry.checked;
  o.detail << ops.size() << " op cases max rel err " << op_err << "; miniature model (" << mini.result.entries.size()
           << " tensors, " << probed << " probes) max rel err " << mini_err << " (tolerance 1e-4, f64)";
}

void structure_criterion(Outcome& o) {
  EmsaConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.reduction = 4;
  cfg.upsample = UpsampleStrategy::pixel_shuffle;
  auto w = random_attention_weights<double>(cfg, 1);
  const Spatial sp{8, 8};
  const auto x = randn({2, 64, 8}, 2);

  auto none = cfg;
  none.upsample = UpsampleStrategy::none;
  o.require(same(emsav2_forward(x, w, none, sp), emsa_forward(x, w, cfg, sp)), "upsample none == EMSA");

  const auto br = attention_branches(x, w, cfg, sp);
  const auto up = upsample_branch(br.values, w, cfg, br.reduced, sp);
  o.require(same(emsav2_forward(x, w, cfg, sp), add(emsa_forward(x, w, cfg, sp), up)), "branch additivity");

  auto m = cfg;
  m.mhim = true;
  m.norm_kind = MhimNorm::identity;
  w.mhim_weight = TensorD({2, 2, 1, 1}, {1, 0, 0, 1});
  w.mhim_bias = TensorD::zeros({2});
  o.require(same(emsav2_forward(x, w, m, sp), emsav2_forward(x, w, cfg, sp)), "identity MHIM");

  bool round_trip = true;
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t ws = 1 + rng() % 6;
    const Spatial s{1 + rng() % (3 * ws), 1 + rng() % (3 * ws)};
    const auto v = randn({1 + rng() % 2, s.tokens(), 3}, 10 + t);
    const auto [win, meta] = window_partition(v, s, ws);
    round_trip = round_trip && same(window_merge(win, meta), v);
  }
  o.require(round_trip, "window partition/merge round trip");

  auto windowed = cfg;
  windowed.window = WindowStyle::win;
  windowed.window_size = 8;
  o.require(same(styled_block_attention(x, w, windowed, sp, {}), emsav2_forward(x, w, cfg, sp)),
            "win == global at window-sized extent");

  auto mc = preset("mini");
  const Model<double> model(mc, zero_residual_branches(init_weights<double>(mc, 4), mc));
  const auto images = synthetic_images<double>(2, 3, 32, 32, 5);
  auto fm = model.stem_forward(images);
  bool identity = true;
  for (std::size_t s = 0; s < kStages; ++s) {
    if (s > 0) fm = model.patch_embed_forward(s, fm);
    identity = identity && same(model.block_forward(s, 0, fm), fm.tokens);
  }
  o.require(identity, "residual-zero block == identity");
  o.detail << "six equivalences checked bitwise in f64";
}

void analysis_criterion(Outcome& o) {
  const auto x = randn({200, 16}, 6);
  const auto q = [&] {
    // orthogonal matrix from Gram-Schmidt on a Gaussian draw
    auto a = randn({16, 16}, 7);
    std::vector<double> v(a.values());
    for (std::size_t j = 0; j < 16; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0;
        for (std::size_t i = 0; i < 16; ++i) dot += v[i * 16 + j] * v[i * 16 + k];
        for (std::size_t i = 0; i < 16; ++i) v[i * 16 + j] -= dot * v[i * 16 + k];
      }
      double n = 0;
      for (std::size_t i = 0; i < 16; ++i) n += v[i * 16 + j] * v[i * 16 + j];
      for (std::size_t i = 0; i < 16; ++i) v[i * 16 + j] /= std::sqrt(n);
    }
    return TensorD({16, 16}, v);
  }();
  const double orth = linear_cka(x, matmul(x, q)).value;
  const double indep = linear_cka(randn({1000, 50}, 42), randn({1000, 50}, 43)).value;
  o.require(std::abs(orth - 1) < 1e-9, "CKA(X, XQ) == 1");
  o.require(indep < 0.1, "independent gaussians < 0.1");

  // 32 draws stacked as channels, so their amplitudes are averaged before the log
  const double noise = delta_log_amplitude(randn({32, 64, 64}, 100)).delta_log_amplitude;
  const double constant = delta_log_amplitude(TensorD::full({1, 64, 64}, 1.0)).delta_log_amplitude;
  o.require(std::abs(noise) < 0.2, "white noise |delta| < 0.2");
  o.require(constant <= -10, "constant delta <= -10");

  std::size_t grid = 0, matched = 0;
  for (auto style : {WindowStyle::global, WindowStyle::win, WindowStyle::hwin, WindowStyle::cwin}) {
    for (Spatial g : {Spatial{32, 32}, Spatial{48, 40}, Spatial{50, 70}, Spatial{96, 64}}) {
      auto cfg = preset("mini");
      cfg.blocks = {2, 1, 2, 1};
      cfg.window_sizes = {5, 3, 2, 2};
      cfg.style = style;
      const auto model = build_model<float>(cfg, 8);
      FlopTally tally;
      {
        ScopedFlopTally scope(tally);
        model.forward(synthetic_images<float>(1, 3, g.height, g.width, 9));
      }
      ++grid;
      matched += count_flops(cfg, g).tally() == tally ? 1 : 0;
    }
  }
  o.require(matched == grid, "FLOPs oracle");
  o.detail << "CKA orth " << orth << ", independent " << indep << "; noise delta " << noise << ", constant delta "
           << constant << "; FLOPs oracle " << matched << "/" << grid << " geometries exact";
}

void scale_criterion(Outcome& o) {
  // The accuracy, detection, segmentation and hardware-throughput results depend
  // on trained weights and datasets; only the inspection reports are produced here.
  const auto cfg = preset("mini");
  const auto model = build_model<float>(cfg, 42);
  const auto rows = branch_similarity_report(model, synthetic_images<float>(2, 3, 64, 64, 1));
  ForwardTrace<float> trace;
  model.forward(synthetic_images<float>(1, 3, 128, 128, 2), &trace);
  const auto& st = trace.stages.back();
  const auto img = tokens_to_image(st.tokens.cast<double>(), st.spatial.height, st.spatial.width);
  const auto profile = delta_log_amplitude(TensorD({img.dim(1), st.spatial.height, st.spatial.width}, img.values()));
  bool finite = std::isfinite(profile.delta_log_amplitude);
  for (const auto& r : rows) finite = finite && r.attention_vs_upsample && std::isfinite(*r.attention_vs_upsample);
  o.require(finite, "inspection reports on random-init weights");
  o.detail << "not reproducible at desk scale: ImageNet top-1, COCO AP, ADE20K mIoU, V100 throughput and the "
              "trained-weight CKA/spectrum curves; spectrum and CKA reports emitted on random-init weights for "
              "inspection only ("
           << rows.size() << " blocks)";
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
    double budget_s;
  };
  const std::vector<Criterion> criteria{
      {1, "parameter reconciliation", params_criterion, 60},
      {2, "FLOPs reconciliation", flops_criterion, 60},
      {3, "window-style ordering", window_criterion, 60},
      {4, "gradient suite", gradient_criterion, 300},
      {5, "structural equivalences", structure_criterion, 120},
      {6, "analysis-tool properties", analysis_criterion, 120},
      {7, "desk-scale scope", scale_criterion, 120},
  };
  bool all = true;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs < c.budget_s, "runtime budget");
    all = all && o.pass;
    std::printf("criterion %d %s: %s (%.1fs) %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
