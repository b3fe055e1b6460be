// volgen: phantoms, pretrain2d, inflate, train3d, generate, evaluate, params.
//
// Failures print one line "error: <code>: <message>" to stderr and exit
// nonzero. Codes: usage, config, missing-artifact, io, invalid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "volgen/archive.hpp"
#include "volgen/config.hpp"
#include "volgen/evaluation.hpp"
#include "volgen/inflation.hpp"
#include "volgen/kernels.hpp"
#include "volgen/nets.hpp"
#include "volgen/training.hpp"
#include "volgen/volume.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace volgen;

namespace {

struct CliError : std::runtime_error {
  std::string code;
  CliError(std::string c, const std::string& msg) : std::runtime_error(msg), code(std::move(c)) {}
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string run;
};

void add_common(CLI::App* cmd, Common& c, bool needs_run) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--set", c.sets, "Dotted-key override, e.g. train.seed=7 (repeatable)");
  if (needs_run) cmd->add_option("--run", c.run, "Run directory for all outputs")->required();
}

config::RunConfig load_config(const Common& c) { return config::load(c.config, c.sets); }

// Creates the run layout and writes the resolved configuration.
fs::path prepare_run(const std::string& dir, const config::RunConfig& cfg, double default_kimg) {
  const fs::path run(dir);
  std::error_code ec;
  for (const char* sub : {"checkpoints", "samples", "reports"}) {
    fs::create_directories(run / sub, ec);
    if (ec) throw CliError("io", "cannot create " + (run / sub).string() + ": " + ec.message());
  }
  write_text_atomic(run / "config.resolved.json", config::resolved(cfg, default_kimg).dump(2) + "\n");
  return run;
}

Archive read_checkpoint(const std::string& path, const std::string& producer) {
  if (path.empty() || !fs::exists(path))
    throw CliError("missing-artifact",
                   (path.empty() ? std::string("no checkpoint given") : "checkpoint '" + path + "' not found") +
                       "; run `volgen " + producer + "` first and pass its checkpoints/final.vgck");
  return read_archive(path);
}

void write_metrics(const fs::path& path, const std::vector<train::MetricRow>& rows) {
  std::string text = train::metrics_header() + "\n";
  for (const auto& r : rows) text += r.csv() + "\n";
  write_text_atomic(path, text);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_row(const train::MetricRow& r) {
  std::cout << "kimg " << fmt(r.kimg);
  if (!std::isnan(r.loss_G)) std::cout << "  loss_G " << fmt(r.loss_G) << "  loss_D " << fmt(r.loss_D);
  if (r.fid_avg) std::cout << "  fid_avg " << fmt(*r.fid_avg);
  std::cout << std::endl;
}

std::string snapshot_name(int64_t step) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "snapshot-%06lld.vgck", static_cast<long long>(step));
  return buf;
}

// Snapshot hook: progress line, checkpoint, and the metric log so far.
train::SnapshotFn snapshot_writer(const fs::path& run, std::vector<train::MetricRow>& rows,
                                  const json& extra) {
  return [&run, &rows, extra](const train::MetricRow& row, const train::GanTrainer& t) {
    rows.push_back(row);
    print_row(row);
    write_archive(run / "checkpoints" / snapshot_name(t.steps_done()), t.to_archive(extra));
    write_metrics(run / "metrics.csv", rows);
  };
}

// Tiles same-sized images into a grid of up to 8 columns.
Tensor<float> tile(const std::vector<Tensor<float>>& images) {
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t r = images[0].dim(0), c = images[0].dim(1);
  const int64_t cols = std::min<int64_t>(n, 8), rows = (n + cols - 1) / cols;
  Tensor<float> grid({rows * r, cols * c}, -1.0f);
  for (int64_t k = 0; k < n; ++k) {
    const int64_t gy = k / cols, gx = k % cols;
    for (int64_t y = 0; y < r; ++y)
      for (int64_t x = 0; x < c; ++x)
        grid[(gy * r + y) * cols * c + gx * c + x] = images[k][y * c + x];
  }
  return grid;
}

std::unique_ptr<eval::FeatureExtractor> extractor_for(const config::RunConfig& cfg) {
  try {
    return eval::make_extractor(cfg.eval.extractor);
  } catch (const std::exception& e) {
    throw CliError("config", std::string("eval.extractor: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

int cmd_phantoms(const Common& c, const std::string& out) {
  auto cfg = load_config(c);
  if (cfg.data.phantom.count == 0) throw CliError("invalid", "empty dataset requested");
  const fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError("io", "cannot create " + dir.string() + ": " + ec.message());
  cfg.data.manifest.reset();
  write_text_atomic(dir / "config.resolved.json", config::resolved(cfg, 0).dump(2) + "\n");

  DatasetManifest m;
  m.target_shape = cfg.data.target_shape;
  m.hu_window = cfg.data.hu_window;
  for (int64_t i = 0; i < cfg.data.phantom.count; ++i) {
    PhantomSpec spec;
    spec.seed = cfg.data.phantom.seed + static_cast<uint64_t>(i);
    spec.shape = cfg.data.target_shape;
    spec.n_ellipsoids = cfg.data.phantom.n_ellipsoids;
    spec.intensity_lo = cfg.data.phantom.intensity_lo;
    spec.intensity_hi = cfg.data.phantom.intensity_hi;
    const Volume v = generate_phantom(spec);
    write_volume(dir, v, cfg.data.hu_window);
    m.records.push_back({v.id + ".json", v.modality, v.depth()});
  }
  write_manifest(dir / "manifest.json", m);
  std::cout << "wrote " << m.records.size() << " volumes and " << (dir / "manifest.json").string()
            << std::endl;
  return 0;
}

int cmd_pretrain2d(const Common& c) {
  const auto cfg = load_config(c);
  const auto tc = cfg.train_for(100);
  const fs::path run = prepare_run(c.run, cfg, 100);
  const auto twin = nets::planar_twin(cfg.model_config());
  const auto os = twin.generator.output_shape();

  std::vector<Slice2D> slices;
  for (const auto& v : config::load_volumes(cfg.data))
    for (auto& s : extract_slices(v, cfg.data.plane)) {
      // Sagittal/coronal slices are resampled to the twin's in-plane size.
      if (s.rows() != os[1] || s.cols() != os[2]) s.pixels = resize_bilinear(s.pixels, os[1], os[2]);
      slices.push_back(std::move(s));
    }
  std::cout << "pretraining the 2D twin on " << slices.size() << " " << to_string(cfg.data.plane)
            << " slices for " << tc.total_kimg << " kimg" << std::endl;

  const auto extractor = extractor_for(cfg);
  train::EvalSetup ev{extractor.get(), cfg.eval.n_samples, tc.seed};
  std::vector<train::MetricRow> rows;
  const json extra = {{"kind", "pretrain2d"}, {"seed", tc.seed}};
  const auto res = train::pretrain_2d(twin, tc, slices, ev, snapshot_writer(run, rows, extra));
  write_archive(run / "checkpoints" / "final.vgck", res.checkpoint);
  write_metrics(run / "metrics.csv", res.metrics);
  std::cout << "checkpoint: " << (run / "checkpoints" / "final.vgck").string() << std::endl;
  return 0;
}

int cmd_inflate(const Common& c, const std::string& init) {
  const auto cfg = load_config(c);
  const auto tc = cfg.train_for(50);
  const Archive src = read_checkpoint(init, "pretrain2d");
  if (cfg.inflate.strategy.kind == inflation::Kind::None)
    throw CliError("config", "inflate.strategy is NONE; choose I1, I2, I3, ASC or NWI");
  const fs::path run = prepare_run(c.run, cfg, 50);
  auto prep = train::prepare_3d(cfg.model_config(), tc, &src, cfg.inflate.strategy, cfg.inflate.scope);
  json extra = {{"kind", "inflate"},
                {"seed", tc.seed},
                {"inflation",
                 {{"strategy", inflation::to_string(cfg.inflate.strategy.kind)},
                  {"T", cfg.inflate.strategy.T},
                  {"scope", inflation::to_string(cfg.inflate.scope)},
                  {"residual_init", inflation::to_string(cfg.inflate.strategy.residual_init)}}}};
  write_archive(run / "checkpoints" / "inflated.vgck", prep.trainer.to_archive(extra));
  write_text_atomic(run / "reports" / "inflation.json", prep.report->to_json() + "\n");
  std::cout << "inflated " << prep.report->count("inflated") << ", copied "
            << prep.report->count("copied") << ", fresh " << prep.report->count("fresh")
            << " parameters -> " << (run / "checkpoints" / "inflated.vgck").string() << std::endl;
  return 0;
}

int cmd_train3d(const Common& c, const std::string& init) {
  const auto cfg = load_config(c);
  const auto tc = cfg.train_for(50);
  const bool inflate = cfg.inflate.strategy.kind != inflation::Kind::None;
  if (inflate && init.empty())
    throw CliError("missing-artifact",
                   "inflate.strategy=" + inflation::to_string(cfg.inflate.strategy.kind) +
                       " needs a 2D checkpoint; run `volgen pretrain2d` first and pass --init "
                       "<run>/checkpoints/final.vgck (or set inflate.strategy=NONE)");
  std::optional<Archive> src;
  if (!init.empty()) src = read_checkpoint(init, "pretrain2d");
  const fs::path run = prepare_run(c.run, cfg, 50);
  const auto volumes = config::load_volumes(cfg.data);
  std::cout << "training 3D " << nets::to_string(cfg.model.variant) << " on " << volumes.size()
            << " volumes for " << tc.total_kimg << " kimg ("
            << (src ? "init " + inflation::to_string(cfg.inflate.strategy.kind) : std::string("fresh"))
            << ")" << std::endl;

  const auto extractor = extractor_for(cfg);
  train::EvalSetup ev{extractor.get(), cfg.eval.n_samples, tc.seed};
  std::vector<train::MetricRow> rows;
  const json extra = {{"kind", "train3d"}, {"seed", tc.seed}};
  const auto res = train::train_3d(cfg.model_config(), tc, volumes, src ? &*src : nullptr,
                                   cfg.inflate.strategy, cfg.inflate.scope, ev,
                                   snapshot_writer(run, rows, extra));
  write_archive(run / "checkpoints" / "final.vgck", res.checkpoint);
  write_metrics(run / "metrics.csv", res.metrics);
  if (res.inflation) write_text_atomic(run / "reports" / "inflation.json", res.inflation->to_json() + "\n");
  std::cout << "checkpoint: " << (run / "checkpoints" / "final.vgck").string() << std::endl;
  return 0;
}

int cmd_generate(const Common& c, const std::string& ckpt, int64_t count, uint64_t seed) {
  const auto cfg = load_config(c);
  if (count < 1) throw CliError("invalid", "--count must be >= 1");
  const Archive a = read_checkpoint(ckpt, "train3d");
  const fs::path run = prepare_run(c.run, cfg, 50);
  const auto models = train::load_models(a);
  const auto samples = train::as_volumes(train::generate(models.G, count, seed), "sample_");
  for (const auto& v : samples) write_volume(run / "samples", v, cfg.data.hu_window);
  for (Plane p : {Plane::Axial, Plane::Sagittal, Plane::Coronal}) {
    std::vector<Tensor<float>> centers;
    for (const auto& v : samples) centers.push_back(center_slice(v, p).pixels);
    write_pgm(run / "samples" / ("grid_" + to_string(p) + ".pgm"), tile(centers), -1.0f, 1.0f);
  }
  std::cout << "wrote " << samples.size() << " samples to " << (run / "samples").string() << std::endl;
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& ckpt) {
  const auto cfg = load_config(c);
  const Archive a = read_checkpoint(ckpt, "train3d");
  const fs::path run = prepare_run(c.run, cfg, 50);
  const auto models = train::load_models(a);
  const auto real = config::load_volumes(cfg.data);
  const auto extractor = extractor_for(cfg);
  const auto fake = train::as_volumes(
      train::generate(models.G, cfg.eval.n_samples, cfg.train.seed), "sample_");
  const auto rep = eval::slice_fid(real, fake, *extractor);
  const double kimg = a.manifest.value("kimg", 0.0);
  write_text_atomic(run / "reports" / "fid.json", rep.to_json() + "\n");
  write_text_atomic(run / "reports" / "fid.csv", train::metrics_header() + "\n" + rep.csv_row(kimg) + "\n");
  std::cout << "fid_ax " << fmt(rep.fid_ax) << "  fid_sag " << fmt(rep.fid_sag) << "  fid_cor "
            << fmt(rep.fid_cor) << "  fid_avg " << fmt(rep.fid_avg) << "  (n=" << rep.n_used
            << ", extractor " << rep.extractor_id << ")" << std::endl;
  return 0;
}

int cmd_params(const Common& c, const std::string& variant, bool as_json) {
  auto cfg = load_config(c);
  std::vector<nets::Architecture> archs;
  if (variant == "all") {
    archs = nets::all_architectures();
  } else if (!variant.empty()) {
    try {
      archs = {nets::parse_architecture(variant)};
    } catch (const std::exception& e) {
      throw CliError("config", e.what());
    }
  } else {
    archs = {cfg.model.variant};
  }
  std::vector<nets::ModelSummary> rows;
  for (auto a : archs) {
    cfg.model.variant = a;
    rows.push_back(nets::count_parameters(cfg.model_config()));
  }
  const auto base = [&] {
    cfg.model.variant = nets::Architecture::Baseline;
    return nets::count_parameters(cfg.model_config());
  }();
  if (as_json) {
    json out = json::array();
    for (const auto& r : rows) {
      json j = json::parse(r.to_json());
      j["ratio_to_baseline"] = static_cast<double>(r.total) / static_cast<double>(base.total);
      out.push_back(j);
    }
    std::cout << out.dump(2) << std::endl;
  } else {
    std::cout << nets::format_summary_table(rows);
    for (const auto& r : rows)
      if (r.model != base.model)
        std::cout << r.model << " / " << base.model << " = "
                  << fmt(static_cast<double>(r.total) / static_cast<double>(base.total)) << "\n";
  }
  if (!c.run.empty()) {
    const fs::path run = prepare_run(c.run, cfg, 50);
    json out = json::array();
    for (const auto& r : rows) out.push_back(json::parse(r.to_json()));
    write_text_atomic(run / "reports" / "params.json", out.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"volgen: parameter-efficient 3D style-based GANs with 2D->3D weight inflation"};
  app.require_subcommand(1);

  Common phantoms_c, pre_c, inf_c, tr_c, gen_c, ev_c, par_c;
  std::string out_dir, inf_init, tr_init, gen_ckpt, ev_ckpt, variant;
  int64_t gen_count = 8;
  uint64_t gen_seed = 0;
  bool as_json = false;

  auto* phantoms = app.add_subcommand("phantoms", "Write a synthetic phantom dataset");
  add_common(phantoms, phantoms_c, false);
  phantoms->add_option("--out", out_dir, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain2d", "Pretrain the 2D twin on slices");
  add_common(pre, pre_c, true);

  auto* inf = app.add_subcommand("inflate", "Inflate a 2D checkpoint into a 3D checkpoint");
  add_common(inf, inf_c, true);
  inf->add_option("--init", inf_init, "2D checkpoint from pretrain2d")->required();

  auto* tr = app.add_subcommand("train3d", "Train the 3D GAN (inflated or fresh)");
  add_common(tr, tr_c, true);
  tr->add_option("--init", tr_init, "2D checkpoint from pretrain2d (needed unless inflate.strategy=NONE)");

  auto* gen = app.add_subcommand("generate", "Sample volumes and centre-slice grids");
  add_common(gen, gen_c, true);
  gen->add_option("--checkpoint", gen_ckpt, "Checkpoint to sample from")->required();
  gen->add_option("--count", gen_count, "Number of samples");
  gen->add_option("--seed", gen_seed, "Sampling seed");

  auto* ev = app.add_subcommand("evaluate", "Slice-FID of a checkpoint against the dataset");
  add_common(ev, ev_c, true);
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to evaluate")->required();

  auto* par = app.add_subcommand("params", "Parameter counts per variant");
  add_common(par, par_c, false);
  par->add_option("--run", par_c.run, "Optional run directory for reports/params.json");
  par->add_option("--variant", variant, "Variant name or 'all' (default: model.variant)");
  par->add_flag("--json", as_json, "Print JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: usage: " << msg << std::endl;
    return 2;
  }

  try {
    if (*phantoms) return cmd_phantoms(phantoms_c, out_dir);
    if (*pre) return cmd_pretrain2d(pre_c);
    if (*inf) return cmd_inflate(inf_c, inf_init);
    if (*tr) return cmd_train3d(tr_c, tr_init);
    if (*gen) return cmd_generate(gen_c, gen_ckpt, gen_count, gen_seed);
    if (*ev) return cmd_evaluate(ev_c, ev_ckpt);
    if (*par) return cmd_params(par_c, variant, as_json);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.code << ": " << e.what() << std::endl;
    return 1;
  } catch (const config::ConfigError& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << (msg == "empty dataset requested" ? "invalid" : "config") << ": " << msg
              << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: invalid: " << msg << std::endl;
    return 1;
  }
  return 1;
}
