#include "restv2/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>

#include "restv2/bench.hpp"
#include "restv2/branches.hpp"
#include "restv2/cka.hpp"
#include "restv2/errors.hpp"
#include "restv2/flops.hpp"
#include "restv2/grad_suite.hpp"
#include "restv2/model.hpp"
#include "restv2/ops.hpp"
#include "restv2/params.hpp"
#include "restv2/report.hpp"
#include "restv2/spectrum.hpp"
#include "restv2/weights_io.hpp"

namespace restv2 {

namespace {

using Json = nlohmann::ordered_json;

struct Output {
  Json json;
  std::optional<std::string> csv;
};

struct Options {
  std::string model = "restv2-t";
  std::string config;
  std::size_t size = 224;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t batch = 1;
  std::uint64_t seed = 42;
  std::string format = "json";
  std::string output;
  std::string weights;
  std::string input;
  std::string style;
  std::string x_path;
  std::string y_path;
  bool reconcile = false;
  bool mini = false;
  std::size_t samples = 4;
  std::size_t stage = 3;
  std::size_t warmup = 1;
  std::size_t iters = 3;
};

ModelConfig resolve_model(const Options& o) {
  return o.config.empty() ? preset(o.model) : load_config_file(o.config);
}

Spatial resolve_geometry(const Options& o) {
  const Spatial s{o.height ? o.height : o.size, o.width ? o.width : o.size};
  if (s.height == 0 || s.width == 0) throw UsageError("input geometry must be positive");
  return s;
}

Json tally_json(const FlopTally& t) {
  return Json{{"conv", t.conv}, {"linear", t.linear}, {"matmul", t.matmul}, {"other", t.other}, {"total", t.total()}};
}

Json flops_json(const FlopsReport& r) {
  Json modules = Json::array();
  for (const auto& m : r.modules) {
    auto j = tally_json(m.flops);
    j["params"] = m.params;
    modules.push_back(Json{{"name", m.name}, {"flops", j}});
  }
  return Json{{"conv_flops", r.conv_flops},     {"linear_flops", r.linear_flops}, {"matmul_flops", r.matmul_flops},
              {"other_flops", r.other_flops},   {"total_flops", r.total()},       {"params", r.params},
              {"modules", modules}};
}

std::string flops_csv(const FlopsReport& r) {
  CsvTable t({"module", "conv", "linear", "matmul", "other", "total", "params"});
  for (const auto& m : r.modules) {
    t.add_row({m.name, std::to_string(m.flops.conv), std::to_string(m.flops.linear), std::to_string(m.flops.matmul),
               std::to_string(m.flops.other), std::to_string(m.flops.total()), std::to_string(m.params)});
  }
  t.add_row({"total", std::to_string(r.conv_flops), std::to_string(r.linear_flops), std::to_string(r.matmul_flops),
             std::to_string(r.other_flops), std::to_string(r.total()), std::to_string(r.params)});
  return t.str();
}

Json config_json(const ModelConfig& c) {
  return Json{{"name", c.name},
              {"base_channels", c.base_channels},
              {"heads", c.heads},
              {"blocks", c.blocks},
              {"reductions", c.reductions},
              {"window_sizes", c.window_sizes},
              {"pe", to_string(c.pe)},
              {"variant", to_string(c.variant)},
              {"upsample", to_string(c.upsample)},
              {"mhim", c.mhim},
              {"mhim_norm", to_string(c.mhim_norm)},
              {"style", to_string(c.style)},
              {"mlp_ratio", c.mlp_ratio},
              {"num_classes", c.num_classes},
              {"in_channels", c.in_channels},
              {"image_size", c.image_size}};
}

Json spatial_json(Spatial s) { return Json::array({s.height, s.width}); }

Output cmd_describe(const Options& o) {
  const auto cfg = resolve_model(o);
  const auto geo = resolve_geometry(o);
  const auto ext = stage_extents(cfg, geo);
  Json stages = Json::array();
  CsvTable csv({"stage", "channels", "heads", "head_dim", "blocks", "reduction", "window_size", "height", "width",
                "key_height", "key_width"});
  for (std::size_t s = 0; s < kStages; ++s) {
    const auto a = cfg.attention_config(s);
    const auto red = a.reduced(ext[s]);
    stages.push_back(Json{{"stage", s},
                          {"channels", a.dim},
                          {"heads", a.heads},
                          {"head_dim", a.head_dim()},
                          {"blocks", cfg.blocks[s]},
                          {"reduction", a.reduction},
                          {"window_size", a.window_size},
                          {"extent", spatial_json(ext[s])},
                          {"key_extent", spatial_json(red)}});
    csv.add_row({std::to_string(s), std::to_string(a.dim), std::to_string(a.heads), std::to_string(a.head_dim()),
                 std::to_string(cfg.blocks[s]), std::to_string(a.reduction), std::to_string(a.window_size),
                 std::to_string(ext[s].height), std::to_string(ext[s].width), std::to_string(red.height),
                 std::to_string(red.width)});
  }
  const auto flops = count_flops(cfg, geo);
  Json j{{"model", cfg.name},
         {"config", config_json(cfg)},
         {"input", spatial_json(geo)},
         {"stem", Json{{"channels", cfg.base_channels}, {"extent", spatial_json(stem_extent(geo))}}},
         {"stages", stages},
         {"params", flops.params},
         {"flops", flops.total()}};
  return Output{j, csv.str()};
}

Output cmd_forward(const Options& o) {
  const auto cfg = resolve_model(o);
  const auto model = o.weights.empty() ? build_model<float>(cfg, o.seed) : load_model<float>(cfg, o.weights);
  TensorF images;
  if (!o.input.empty()) {
    images = load_tensor(o.input);
  } else {
    const auto geo = resolve_geometry(o);
    if (o.batch == 0) throw UsageError("batch must be positive");
    images = synthetic_images<float>(o.batch, cfg.in_channels, geo.height, geo.width, o.seed);
  }
  const auto logits = model.forward(images);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Json rows = Json::array();
  CsvTable csv({"item", "class", "logit"});
  for (std::size_t i = 0; i < b; ++i) {
    Json row = Json::array();
    for (std::size_t c = 0; c < k; ++c) {
      const float v = logits.values()[i * k + c];
      row.push_back(v);
      csv.add_row({std::to_string(i), std::to_string(c), format_number(v)});
    }
    rows.push_back(row);
  }
  Json j{{"model", cfg.name},
         {"input_shape", images.shape()},
         {"logits_shape", logits.shape()},
         {"logits", rows}};
  return Output{j, csv.str()};
}

Json group_json(const ParamBreakdown& b) {
  Json g = Json::object();
  for (const auto& e : b.groups) g[e.group] = e.count;
  return g;
}

Output reconciliation_output(const std::vector<ReconciliationRow>& rows, const char* unit) {
  Json items = Json::array();
  CsvTable csv({"label", "preset", "published", "computed", "relative_error", "within_tolerance"});
  bool all = true;
  for (const auto& r : rows) {
    Json deltas = Json::object();
    for (const auto& d : r.delta_vs_reference) deltas[d.group] = d.delta;
    items.push_back(Json{{"label", r.anchor.label},
                         {"preset", r.anchor.preset},
                         {"published", r.anchor.published},
                         {"computed", r.computed},
                         {"relative_error", r.relative_error},
                         {"tolerance", r.anchor.tolerance},
                         {"within_tolerance", r.within},
                         {"param_groups", group_json(r.breakdown)},
                         {"delta_vs_restv2_t", deltas}});
    csv.add_row({r.anchor.label, r.anchor.preset, format_number(r.anchor.published), format_number(r.computed),
                 format_number(r.relative_error), r.within ? "true" : "false"});
    all = all && r.within;
  }
  return Output{Json{{"unit", unit}, {"all_within_tolerance", all}, {"rows", items}}, csv.str()};
}

Output cmd_params(const Options& o) {
  if (o.reconcile) return reconciliation_output(reconcile_params(), "millions of parameters");
  const auto cfg = resolve_model(o);
  const auto b = count_params(cfg);
  CsvTable csv({"group", "count"});
  for (const auto& g : b.groups) csv.add_row({g.group, std::to_string(g.count)});
  csv.add_row({"total", std::to_string(b.total)});
  return Output{Json{{"model", cfg.name}, {"total", b.total}, {"groups", group_json(b)}}, csv.str()};
}

Output cmd_flops(const Options& o) {
  if (o.reconcile) return reconciliation_output(reconcile_flops(), "GFLOPs (multiply-accumulates) at 224x224");
  const auto cfg = resolve_model(o);
  const auto geo = resolve_geometry(o);
  const auto r = count_flops(cfg, geo);
  Json j{{"model", cfg.name}, {"input", spatial_json(geo)}};
  j.update(flops_json(r));
  return Output{j, flops_csv(r)};
}

Output cmd_winflops(const Options& o) {
  const auto cfg = resolve_model(o);
  const Spatial geo{o.height ? o.height : 800, o.width ? o.width : 1216};
  Json styles = Json::array();
  CsvTable csv({"style", "conv", "linear", "matmul", "other", "total", "params"});
  std::array<FlopsReport, 4> reports;
  const std::array<WindowStyle, 4> order{WindowStyle::win, WindowStyle::cwin, WindowStyle::hwin, WindowStyle::global};
  for (std::size_t i = 0; i < order.size(); ++i) {
    reports[i] = window_style_flops(cfg, order[i], geo);
    const auto& r = reports[i];
    styles.push_back(Json{{"style", to_string(order[i])},
                          {"conv_flops", r.conv_flops},
                          {"linear_flops", r.linear_flops},
                          {"matmul_flops", r.matmul_flops},
                          {"other_flops", r.other_flops},
                          {"total_flops", r.total()},
                          {"params", r.params}});
    csv.add_row({to_string(order[i]), std::to_string(r.conv_flops), std::to_string(r.linear_flops),
                 std::to_string(r.matmul_flops), std::to_string(r.other_flops), std::to_string(r.total()),
                 std::to_string(r.params)});
  }
  const auto& win = reports[0];
  const auto& cwin = reports[1];
  const auto& hwin = reports[2];
  const auto& global = reports[3];
  Json j{{"model", cfg.name},
         {"input", spatial_json(geo)},
         {"window_sizes", cfg.window_sizes},
         {"styles", styles},
         {"matmul_global_gt_hwin_gt_win",
          global.matmul_flops > hwin.matmul_flops && hwin.matmul_flops > win.matmul_flops},
         {"linear_win_ge_global", win.linear_flops >= global.linear_flops},
         {"cwin_minus_win_conv", cwin.conv_flops - win.conv_flops}};
  return Output{j, csv.str()};
}

Output cmd_gradcheck(const Options& o, int& status) {
  constexpr double kThreshold = 1e-4;
  auto cases = op_gradient_suite(o.seed);
  if (o.mini) cases.push_back(mini_model_gradcheck(o.seed, o.samples));
  Json items = Json::array();
  CsvTable csv({"case", "checked", "max_rel_error", "passed"});
  for (const auto& c : cases) {
    std::size_t checked = 0;
    for (const auto& e : c.result.entries) checked += e.checked;
    const double err = c.result.max_rel_error();
    items.push_back(Json{{"case", c.name}, {"checked", checked}, {"max_rel_error", err}, {"passed", err < kThreshold}});
    csv.add_row({c.name, std::to_string(checked), format_number(err), err < kThreshold ? "true" : "false"});
  }
  const double worst = suite_max_error(cases);
  status = worst < kThreshold ? kExitOk : kExitDomainError;
  return Output{Json{{"threshold", kThreshold},
                     {"mini_model", o.mini},
                     {"max_rel_error", worst},
                     {"passed", worst < kThreshold},
                     {"cases", items}},
                csv.str()};
}

TensorD feature_map(const TensorF& tokens, Spatial s) {
  // (1, n, C) -> (C, H, W)
  const auto img = tokens_to_image(tokens.cast<double>(), s.height, s.width);
  return TensorD({img.dim(1), s.height, s.width}, img.values());
}

Json profile_json(const SpectrumProfile& p) {
  return Json{{"radial_bins", p.radial_bins},
              {"log_amplitude", p.log_amplitude},
              {"delta_log_amplitude", p.delta_log_amplitude}};
}

Output cmd_spectrum(const Options& o) {
  const auto cfg = resolve_model(o);
  const auto geo = resolve_geometry(o);
  if (o.stage >= kStages) throw UsageError("--stage must be in 0..3");
  const auto model = o.weights.empty() ? build_model<float>(cfg, o.seed) : load_model<float>(cfg, o.weights);
  const auto images = o.input.empty() ? synthetic_images<float>(1, cfg.in_channels, geo.height, geo.width, o.seed)
                                      : load_tensor(o.input);
  if (images.dim(0) != 1) throw DimensionError("spectrum takes a single image");
  ForwardTrace<float> trace;
  model.forward(images, &trace);
  // Maps below 4x4 have no usable radial profile; they are reported as null.
  auto profile_of = [](const TensorF& tokens, Spatial s) -> std::optional<SpectrumProfile> {
    if (s.height < 4 || s.width < 4) return std::nullopt;
    return delta_log_amplitude(feature_map(tokens, s));
  };
  Json blocks = Json::array();
  for (const auto& bt : trace.blocks) {
    const auto p = profile_of(bt.output, bt.spatial);
    blocks.push_back(Json{{"stage", bt.stage},
                          {"block", bt.block},
                          {"delta_log_amplitude", p ? Json(p->delta_log_amplitude) : Json(nullptr)}});
  }
  Json stages = Json::array();
  std::optional<std::string> csv;
  for (std::size_t s = 0; s < trace.stages.size(); ++s) {
    const auto p = profile_of(trace.stages[s].tokens, trace.stages[s].spatial);
    Json j = p ? profile_json(*p) : Json{{"radial_bins", nullptr}, {"log_amplitude", nullptr},
                                         {"delta_log_amplitude", nullptr}};
    j["stage"] = s;
    stages.push_back(j);
    if (s == o.stage && p) csv = spectrum_csv(*p);
  }
  Json j{{"model", cfg.name},
         {"weights", o.weights.empty() ? "random-init" : o.weights},
         {"input", spatial_json(Spatial{images.dim(2), images.dim(3)})},
         {"blocks", blocks},
         {"stages", stages}};
  return Output{j, csv};
}

Output cmd_cka(const Options& o) {
  if (o.x_path.empty() || o.y_path.empty()) throw UsageError("cka needs --x and --y feature files");
  const auto x = load_tensor(o.x_path).cast<double>();
  const auto y = load_tensor(o.y_path).cast<double>();
  const auto r = linear_cka(x, y);
  CsvTable csv({"cka", "degenerate"});
  csv.add_row({format_number(r.value), r.degenerate ? "true" : "false"});
  return Output{Json{{"cka", r.value}, {"degenerate", r.degenerate}, {"rows", x.dim(0)}}, csv.str()};
}

Output cmd_branches(const Options& o, std::ostream& err) {
  const auto cfg = resolve_model(o);
  const auto geo = resolve_geometry(o);
  const auto model = o.weights.empty() ? build_model<float>(cfg, o.seed) : load_model<float>(cfg, o.weights);
  const auto probe = o.input.empty() ? synthetic_images<float>(o.batch, cfg.in_channels, geo.height, geo.width, o.seed)
                                     : load_tensor(o.input);
  const auto rows = branch_similarity_report(model, probe);
  Json items = Json::array();
  CsvTable csv({"stage", "block", "attention_vs_upsample", "attention_vs_combined", "upsample_vs_combined"});
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  auto opt_str = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  bool degenerate = false;
  for (const auto& r : rows) {
    items.push_back(Json{{"stage", r.stage},
                         {"block", r.block},
                         {"attention_vs_upsample", opt(r.attention_vs_upsample)},
                         {"attention_vs_combined", opt(r.attention_vs_combined)},
                         {"upsample_vs_combined", opt(r.upsample_vs_combined)},
                         {"degenerate", r.degenerate}});
    csv.add_row({std::to_string(r.stage), std::to_string(r.block), opt_str(r.attention_vs_upsample),
                 opt_str(r.attention_vs_combined), opt_str(r.upsample_vs_combined)});
    degenerate = degenerate || r.degenerate;
  }
  if (degenerate) err << "warning: some branch outputs have zero variance; their CKA is reported as 0\n";
  return Output{Json{{"model", cfg.name},
                     {"weights", o.weights.empty() ? "random-init" : o.weights},
                     {"probe_shape", probe.shape()},
                     {"blocks", items}},
                csv.str()};
}

Output cmd_bench(const Options& o) {
  auto cfg = resolve_model(o);
  if (!o.style.empty()) cfg.style = parse_window_style(o.style);
  cfg.validate();
  const auto model = build_model<float>(cfg, o.seed);
  BenchOptions bo;
  bo.geometry = resolve_geometry(o);
  bo.batch = o.batch;
  bo.warmup_iters = o.warmup;
  bo.timed_iters = o.iters;
  bo.seed = o.seed;
  const auto r = bench_throughput(model, bo);
  Json phases = Json::object();
  CsvTable csv({"phase", "median_ms"});
  for (const auto& p : r.phases) {
    phases[p.phase] = p.median_ms;
    csv.add_row({p.phase, format_number(p.median_ms)});
  }
  csv.add_row({"total", format_number(r.median_ms)});
  Json j{{"model", cfg.name},
         {"style", to_string(cfg.style)},
         {"input", spatial_json(bo.geometry)},
         {"batch", r.batch},
         {"warmup_iters", bo.warmup_iters},
         {"timed_iters", bo.timed_iters},
         {"run_ms", r.run_ms},
         {"median_ms", r.median_ms},
         {"images_per_second", r.images_per_second},
         {"phase_median_ms", phases},
         {"flops_per_image", r.flops_per_image},
         {"flops_per_second", r.flops_per_second}};
  return Output{j, csv.str()};
}

Output cmd_save_init(const Options& o) {
  if (o.weights.empty()) throw UsageError("save-init needs --weights <path>");
  const auto cfg = resolve_model(o);
  const auto model = build_model<float>(cfg, o.seed);
  save_model(model, o.weights);
  return Output{Json{{"model", cfg.name},
                     {"weights", o.weights},
                     {"seed", o.seed},
                     {"tensors", model.weights().size()},
                     {"params", model.parameter_count()}},
                std::nullopt};
}

Output cmd_load_check(const Options& o) {
  if (o.weights.empty()) throw UsageError("load-check needs --weights <path>");
  const auto cfg = resolve_model(o);
  const auto model = load_model<float>(cfg, o.weights);
  return Output{Json{{"model", cfg.name},
                     {"weights", o.weights},
                     {"ok", true},
                     {"tensors", model.weights().size()},
                     {"params", model.parameter_count()}},
                std::nullopt};
}

void emit(const Output& result, const Options& o, std::ostream& out) {
  std::string text;
  if (o.format == "json") {
    text = result.json.dump(2) + "\n";
  } else if (result.csv) {
    text = *result.csv;
  } else {
    throw UsageError("this command has no csv form");
  }
  if (o.output.empty()) {
    out << text;
  } else {
    write_file_atomic(o.output, text);
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ResTv2 reference and analysis kit", "restv2"};
  app.require_subcommand(1);
  Options o;

  auto model_opts = [&](CLI::App* c) {
    c->add_option("--model", o.model, "built-in configuration name")->capture_default_str();
    c->add_option("--config", o.config, "key=value configuration file (overrides --model)");
  };
  auto geometry_opts = [&](CLI::App* c) {
    c->add_option("--size", o.size, "square input extent")->capture_default_str();
    c->add_option("--height", o.height, "input height (overrides --size)");
    c->add_option("--width", o.width, "input width (overrides --size)");
  };
  auto output_opts = [&](CLI::App* c) {
    c->add_option("--format", o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    c->add_option("--output", o.output, "write the report here instead of stdout");
  };
  auto seed_opt = [&](CLI::App* c) { c->add_option("--seed", o.seed, "RNG seed")->capture_default_str(); };

  std::vector<std::pair<CLI::App*, std::function<Output()>>> commands;
  int status = kExitOk;
  auto add = [&](const char* name, const char* help, std::function<Output()> run) {
    auto* c = app.add_subcommand(name, help);
    output_opts(c);
    commands.emplace_back(c, std::move(run));
    return c;
  };

  auto* describe = add("describe", "stage table and model summary", [&] { return cmd_describe(o); });
  model_opts(describe);
  geometry_opts(describe);

  auto* forward = add("forward", "run a forward pass and print logits", [&] { return cmd_forward(o); });
  model_opts(forward);
  geometry_opts(forward);
  seed_opt(forward);
  forward->add_option("--batch", o.batch)->capture_default_str();
  forward->add_option("--weights", o.weights, "weight file (default: seeded init)");
  forward->add_option("--input", o.input, "raw tensor file (B, C, H, W)");

  auto* params = add("params", "parameter count by group", [&] { return cmd_params(o); });
  model_opts(params);
  params->add_flag("--reconcile", o.reconcile, "compare every built-in against published sizes");

  auto* flops = add("flops", "FLOPs by operator category", [&] { return cmd_flops(o); });
  model_opts(flops);
  geometry_opts(flops);
  flops->add_flag("--reconcile", o.reconcile, "compare built-ins against published FLOPs at 224x224");

  auto* winflops = add("winflops", "FLOPs under the four window styles", [&] { return cmd_winflops(o); });
  model_opts(winflops);
  winflops->add_option("--height", o.height, "input height (default 800)");
  winflops->add_option("--width", o.width, "input width (default 1216)");

  auto* gradcheck = add("gradcheck", "finite-difference gradient suite", [&] { return cmd_gradcheck(o, status); });
  seed_opt(gradcheck);
  gradcheck->add_flag("--mini", o.mini, "also check the miniature full model");
  gradcheck->add_option("--samples", o.samples, "probed elements per parameter tensor")->capture_default_str();

  auto* spectrum = add("spectrum", "log-amplitude spectra of block outputs", [&] { return cmd_spectrum(o); });
  model_opts(spectrum);
  geometry_opts(spectrum);
  seed_opt(spectrum);
  spectrum->add_option("--weights", o.weights);
  spectrum->add_option("--input", o.input, "raw tensor file (1, C, H, W)");
  spectrum->add_option("--stage", o.stage, "stage whose profile the csv form holds")->capture_default_str();

  auto* cka = add("cka", "linear CKA between two feature matrices", [&] { return cmd_cka(o); });
  cka->add_option("--x", o.x_path, "raw tensor file (n, p1)");
  cka->add_option("--y", o.y_path, "raw tensor file (n, p2)");

  auto* branches = add("branches", "per-block CKA between attention and upsample terms",
                       [&] { return cmd_branches(o, err); });
  model_opts(branches);
  geometry_opts(branches);
  seed_opt(branches);
  branches->add_option("--batch", o.batch)->capture_default_str();
  branches->add_option("--weights", o.weights);
  branches->add_option("--input", o.input, "raw tensor file (B, C, H, W)");

  auto* bench = add("bench", "wall-clock forward throughput", [&] { return cmd_bench(o); });
  model_opts(bench);
  geometry_opts(bench);
  seed_opt(bench);
  bench->add_option("--batch", o.batch)->capture_default_str();
  bench->add_option("--warmup", o.warmup)->capture_default_str();
  bench->add_option("--iters", o.iters)->capture_default_str();
  bench->add_option("--style", o.style, "override the attention style");

  auto* save_init = add("save-init", "write seeded initial weights", [&] { return cmd_save_init(o); });
  model_opts(save_init);
  seed_opt(save_init);
  save_init->add_option("--weights", o.weights, "destination weight file");

  auto* load_check = add("load-check", "validate a weight file against a model", [&] { return cmd_load_check(o); });
  model_opts(load_check);
  load_check->add_option("--weights", o.weights, "weight file to check");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    for (auto& [cmd, run] : commands) {
      if (!cmd->parsed()) continue;
      emit(run(), o, out);
      return status;
    }
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
}

}  // namespace restv2
