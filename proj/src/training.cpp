#include "volgen/training.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace volgen::train {

using nets::Architecture;
using nets::ModelConfig;

void TrainConfig::validate() const {
  if (!(gamma >= 0)) throw std::invalid_argument("train.gamma must be >= 0");
  if (batch < 2) throw std::invalid_argument("train.batch must be >= 2");
  if (!(lr_scratch > 0) || !(lr_inflated > 0))
    throw std::invalid_argument("learning rates must be > 0");
  if (!(total_kimg >= 0)) throw std::invalid_argument("train.total_kimg must be >= 0");
  if (!(snapshot_every_kimg > 0)) throw std::invalid_argument("train.snapshot_every_kimg must be > 0");
  if (!(ema_beta > 0 && ema_beta < 1)) throw std::invalid_argument("train.ema_beta must be in (0, 1)");
}

int64_t TrainConfig::total_steps() const {
  return static_cast<int64_t>(std::ceil(total_kimg * 1000.0 / static_cast<double>(batch) - 1e-9));
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"batch", c.batch},
          {"lr_scratch", c.lr_scratch},
          {"lr_inflated", c.lr_inflated},
          {"total_kimg", c.total_kimg},
          {"seed", c.seed},
          {"snapshot_every_kimg", c.snapshot_every_kimg},
          {"plane", to_string(c.plane)},
          {"ema", c.ema},
          {"ema_beta", c.ema_beta}};
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.batch = j.at("batch").get<int64_t>();
  c.lr_scratch = j.at("lr_scratch").get<double>();
  c.lr_inflated = j.at("lr_inflated").get<double>();
  c.total_kimg = j.at("total_kimg").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.snapshot_every_kimg = j.at("snapshot_every_kimg").get<double>();
  c.plane = parse_plane(j.at("plane").get<std::string>());
  c.ema = j.at("ema").get<bool>();
  c.ema_beta = j.at("ema_beta").get<double>();
  return c;
}

nlohmann::ordered_json to_json(const ModelConfig& m) {
  const auto& g = m.generator;
  return {{"variant", nets::to_string(m.architecture)},
          {"channels", g.channels},
          {"base_shape", g.base_shape},
          {"n_doublings", g.n_doublings},
          {"mapping_dim", g.mapping_dim},
          {"planar", g.planar},
          {"noise", g.noise}};
}

ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  auto m = nets::make_model_config(nets::parse_architecture(j.at("variant").get<std::string>()),
                                   j.at("base_shape").get<Index3>(), j.at("n_doublings").get<int>(),
                                   j.at("channels").get<int64_t>(),
                                   j.at("mapping_dim").get<int64_t>(), j.at("planar").get<bool>());
  m.generator.noise = j.value("noise", true);
  return m;
}

// ---------------------------------------------------------------------------

template <typename T>
GanLosses<T> gan_losses(const Var<T>& d_real, const Var<T>& d_fake) {
  GanLosses<T> l;
  l.loss_G = ag::mean(ag::softplus(ag::scale(d_fake, T{-1})));
  l.loss_D = ag::add(ag::mean(ag::softplus(d_fake)), ag::mean(ag::softplus(ag::scale(d_real, T{-1}))));
  return l;
}

template <typename T>
Var<T> r1_from_logits(const Var<T>& d_real, const Var<T>& real, double gamma) {
  const int64_t n = real.shape().at(0);
  if (gamma == 0.0 || !d_real.requires_grad())
    return Var<T>::constant(Tensor<T>(Shape{}));
  auto g = ag::grad(ag::sum(d_real), {real}, true)[0];
  return ag::scale(ag::sum(ag::square(g)), static_cast<T>(gamma / 2.0 / static_cast<double>(n)));
}

template <typename T>
Var<T> r1_penalty(const std::function<Var<T>(const Var<T>&)>& discriminator,
                  const Tensor<T>& real, double gamma) {
  if (!(gamma >= 0)) throw std::invalid_argument("r1_penalty: gamma must be >= 0");
  auto x = Var<T>::leaf(real, true);
  return r1_from_logits(discriminator(x), x, gamma);
}

template <typename T>
void Adam<T>::step(std::vector<Var<T>>& params, const std::vector<Var<T>>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].mutable_value();
    const auto& g = grads[i].value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (int64_t k = 0; k < w.numel(); ++k) {
      const double gk = g[k];
      const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
      const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(w[k] - lr_ * (mk / c1) / (std::sqrt(vk / c2) + eps_));
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng stream(uint64_t seed, const std::string& purpose, uint64_t index) {
  return Rng(splitmix(splitmix(seed) ^ nets::name_hash(purpose)) ^ splitmix(index + 1));
}

Dataset::Dataset(std::vector<Tensor<float>> items, uint64_t seed)
    : items_(std::move(items)), seed_(seed) {
  if (items_.empty()) throw std::invalid_argument("empty dataset");
  const Shape s = items_.front().shape();
  for (const auto& t : items_)
    if (t.shape() != s) throw std::invalid_argument("dataset items have different shapes");
}

Dataset Dataset::from_slices(const std::vector<Slice2D>& slices, uint64_t seed) {
  std::vector<Tensor<float>> items;
  items.reserve(slices.size());
  for (const auto& s : slices) items.push_back(s.pixels.reshaped({1, s.rows(), s.cols()}));
  return Dataset(std::move(items), seed);
}

Dataset Dataset::from_volumes(const std::vector<Volume>& volumes, uint64_t seed) {
  std::vector<Tensor<float>> items;
  items.reserve(volumes.size());
  for (const auto& v : volumes) items.push_back(v.voxels);
  return Dataset(std::move(items), seed);
}

Index3 Dataset::item_shape() const {
  const auto& s = items_.front().shape();
  return {s[0], s[1], s[2]};
}

Tensor<float> Dataset::batch(int64_t step, int64_t batch) {
  const auto sh = item_shape();
  const int64_t per = sh[0] * sh[1] * sh[2];
  const int64_t n = static_cast<int64_t>(items_.size());
  Tensor<float> out({batch, 1, sh[0], sh[1], sh[2]});
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t k = step * batch + b;
    const int64_t epoch = k / n;
    if (epoch != epoch_) {
      perm_.resize(items_.size());
      for (size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
      Rng r = stream(seed_, "epoch", static_cast<uint64_t>(epoch));
      for (size_t i = perm_.size(); i > 1; --i) std::swap(perm_[i - 1], perm_[r.below(i)]);
      epoch_ = epoch;
    }
    const auto& src = items_[perm_[static_cast<size_t>(k % n)]];
    std::copy_n(src.data(), per, out.data() + b * per);
  }
  return out;
}

std::string metrics_header() { return "kimg,loss_G,loss_D,r1,fid_ax,fid_sag,fid_cor,fid_avg"; }

std::string MetricRow::csv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  auto num = [&](double v) {
    if (!std::isnan(v)) os << v;
  };
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << kimg << ",";
  num(loss_G);
  os << ",";
  num(loss_D);
  os << ",";
  num(r1);
  os << ",";
  opt(fid_ax);
  os << ",";
  opt(fid_sag);
  os << ",";
  opt(fid_cor);
  os << ",";
  opt(fid_avg);
  return os.str();
}

nlohmann::ordered_json MetricRow::to_json() const {
  auto num = [](double v) -> nlohmann::ordered_json {
    return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
  };
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  return {{"kimg", kimg},      {"loss_G", num(loss_G)},   {"loss_D", num(loss_D)},
          {"r1", num(r1)},     {"fid_ax", opt(fid_ax)},   {"fid_sag", opt(fid_sag)},
          {"fid_cor", opt(fid_cor)}, {"fid_avg", opt(fid_avg)}};
}

GanModels::GanModels(const ModelConfig& cfg, uint64_t seed)
    : config(cfg),
      G(cfg.generator, splitmix(seed ^ nets::name_hash("generator"))),
      D(cfg.discriminator, splitmix(seed ^ nets::name_hash("discriminator"))) {}

std::vector<Tensor<float>> generate(const nets::Generator<float>& g, int64_t n, uint64_t seed,
                                    int64_t chunk) {
  ag::GradModeGuard no_grad(false);
  const auto& cfg = g.config();
  const auto os = cfg.output_shape();
  const int64_t per = os[0] * os[1] * os[2];
  std::vector<Tensor<float>> out;
  for (int64_t start = 0, c = 0; start < n; start += chunk, ++c) {
    const int64_t m = std::min(chunk, n - start);
    Tensor<float> z({m, cfg.latent_dim});
    for (int64_t i = 0; i < m; ++i) {
      Rng r = stream(seed, "latent", static_cast<uint64_t>(start + i));
      for (int64_t k = 0; k < cfg.latent_dim; ++k) z[i * cfg.latent_dim + k] = static_cast<float>(r.normal());
    }
    Rng noise = stream(seed, "noise", static_cast<uint64_t>(c));
    const auto y = g.forward(Var<float>::constant(std::move(z)), &noise);
    for (int64_t i = 0; i < m; ++i) {
      Tensor<float> s({os[0], os[1], os[2]});
      std::copy_n(y.value().data() + i * per, per, s.data());
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void copy_values(const nets::ParameterStore<float>& from, nets::ParameterStore<float>& to) {
  for (const auto& name : from.names()) to.get(name).mutable_value() = from.get(name).value();
}

Tensor<float> latent_batch(uint64_t seed, const char* purpose, int64_t step, int64_t batch,
                           int64_t dim) {
  Rng r = stream(seed, purpose, static_cast<uint64_t>(step));
  Tensor<float> z({batch, dim});
  for (auto& v : z.vec()) v = static_cast<float>(r.normal());
  return z;
}

}  // namespace

GanTrainer::GanTrainer(const ModelConfig& cfg, const TrainConfig& tc, double lr)
    : tc_(tc), models_(cfg, tc.seed), opt_g_(lr), opt_d_(lr) {
  tc_.validate();
  if (tc_.ema) {
    ema_.emplace(cfg.generator, 0);
    sync_ema();
  }
}

void GanTrainer::sync_ema() {
  if (ema_) copy_values(models_.G.params(), ema_->params());
}

const nets::Generator<float>& GanTrainer::sampling_generator() const {
  return ema_ ? *ema_ : models_.G;
}

double GanTrainer::kimg() const {
  return static_cast<double>(step_) * static_cast<double>(tc_.batch) / 1000.0;
}

StepStats GanTrainer::step(Dataset& data) {
  auto& G = models_.G;
  auto& D = models_.D;
  const int64_t B = tc_.batch;
  const int64_t L = G.config().latent_dim;
  StepStats st;

  // Discriminator update.
  {
    Tensor<float> fake;
    {
      ag::GradModeGuard no_grad(false);
      Rng noise = stream(tc_.seed, "noise.D", static_cast<uint64_t>(step_));
      fake = G.forward(Var<float>::constant(latent_batch(tc_.seed, "latent.D", step_, B, L)), &noise)
                 .value();
    }
    auto real = Var<float>::leaf(data.batch(step_, B), tc_.gamma > 0);
    auto d_real = D.forward(real);
    auto d_fake = D.forward(Var<float>::constant(std::move(fake)));
    auto losses = gan_losses(d_real, d_fake);
    auto total = losses.loss_D;
    if (tc_.gamma > 0) {
      auto r1 = r1_from_logits(d_real, real, tc_.gamma);
      st.r1 = r1.item();
      total = ag::add(total, r1);
    }
    st.loss_D = losses.loss_D.item();
    auto vars = D.params().vars();
    auto grads = ag::grad(total, vars);
    opt_d_.step(vars, grads);
  }

  // Generator update.
  {
    Rng noise = stream(tc_.seed, "noise.G", static_cast<uint64_t>(step_));
    auto fake = G.forward(Var<float>::constant(latent_batch(tc_.seed, "latent.G", step_, B, L)), &noise);
    auto loss = ag::mean(ag::softplus(ag::scale(D.forward(fake), -1.0f)));
    st.loss_G = loss.item();
    auto vars = G.params().vars();
    auto grads = ag::grad(loss, vars);
    opt_g_.step(vars, grads);
  }

  if (ema_) {
    const float b = static_cast<float>(tc_.ema_beta);
    for (const auto& name : G.params().names()) {
      auto& e = ema_->params().get(name).mutable_value();
      const auto& w = G.params().get(name).value();
      for (int64_t k = 0; k < e.numel(); ++k) e[k] = b * e[k] + (1.0f - b) * w[k];
    }
  }
  ++step_;
  return st;
}

Archive GanTrainer::to_archive(const nlohmann::ordered_json& extra) const {
  Archive a;
  a.manifest["format"] = "volgen-checkpoint";
  a.manifest["version"] = 1;
  for (auto it = extra.begin(); it != extra.end(); ++it) a.manifest[it.key()] = it.value();
  a.manifest["model"] = to_json(models_.config);
  a.manifest["train"] = to_json(tc_);
  a.manifest["step"] = step_;
  a.manifest["kimg"] = kimg();
  auto add = [&](const nets::ParameterStore<float>& s, const std::string& prefix) {
    for (const auto& name : s.names()) a.blocks.emplace_back(prefix + name, s.get(name).value());
  };
  add(models_.G.params(), "");
  add(models_.D.params(), "");
  if (ema_) add(ema_->params(), "ema.");
  return a;
}

void load_weights(nets::ParameterStore<float>& store, const Archive& a, const std::string& prefix) {
  for (const auto& name : store.names()) {
    const auto& t = a.block(prefix + name);
    auto& v = store.get(name).mutable_value();
    if (t.shape() != v.shape())
      throw std::invalid_argument("checkpoint block " + prefix + name + " has shape " +
                                  shape_str(t.shape()) + ", model expects " + shape_str(v.shape()));
    v = t;
  }
}

GanModels load_models(const Archive& a, bool prefer_ema) {
  if (a.manifest.value("format", "") != "volgen-checkpoint")
    throw std::invalid_argument("archive is not a model checkpoint");
  GanModels m(model_config_from_json(a.manifest.at("model")), 0);
  const bool ema = prefer_ema && a.has_block("ema." + m.G.params().names().front());
  load_weights(m.G.params(), a, ema ? "ema." : "");
  load_weights(m.D.params(), a);
  return m;
}

std::vector<Volume> as_volumes(const std::vector<Tensor<float>>& samples, const std::string& prefix) {
  std::vector<Volume> out;
  for (size_t i = 0; i < samples.size(); ++i)
    out.emplace_back(samples[i], Modality::SYNTH, prefix + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct LossAccumulator {
  double g = 0, d = 0, r1 = 0;
  int64_t n = 0;
  void add(const StepStats& s) {
    g += s.loss_G;
    d += s.loss_D;
    r1 += s.r1;
    ++n;
  }
  void fill(MetricRow& row) {
    if (n == 0) return;
    row.loss_G = g / n;
    row.loss_D = d / n;
    row.r1 = r1 / n;
    *this = {};
  }
};

using EvalFn = std::function<void(const nets::Generator<float>&, MetricRow&)>;

std::vector<MetricRow> run_loop(GanTrainer& trainer, Dataset& data, const TrainConfig& tc,
                                const EvalFn& evaluate, const SnapshotFn& on_snapshot) {
  std::vector<MetricRow> rows;
  LossAccumulator acc;
  auto snapshot = [&]() {
    MetricRow row;
    row.kimg = trainer.kimg();
    acc.fill(row);
    if (evaluate) evaluate(trainer.sampling_generator(), row);
    rows.push_back(row);
    if (on_snapshot) on_snapshot(row, trainer);
  };
  snapshot();
  const int64_t steps = tc.total_steps();
  const double every = tc.snapshot_every_kimg;
  double next = every;
  for (int64_t s = 0; s < steps; ++s) {
    acc.add(trainer.step(data));
    const bool last = s + 1 == steps;
    if (trainer.kimg() + 1e-9 >= next || last) {
      snapshot();
      while (next <= trainer.kimg() + 1e-9) next += every;
    }
  }
  return rows;
}

std::vector<size_t> eval_subset(size_t n, int64_t k, uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng r = stream(seed, "eval.real", 0);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[r.below(i)]);
  idx.resize(std::min<size_t>(n, static_cast<size_t>(k)));
  return idx;
}

nlohmann::ordered_json metrics_json(const std::vector<MetricRow>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) arr.push_back(r.to_json());
  return arr;
}

}  // namespace

TrainResult pretrain_2d(const ModelConfig& twin, const TrainConfig& tc,
                        const std::vector<Slice2D>& slices, const EvalSetup& ev,
                        const SnapshotFn& on_snapshot) {
  if (slices.size() < 2)
    throw std::invalid_argument("pretrain_2d needs at least 2 slices, got " +
                                std::to_string(slices.size()));
  if (!twin.generator.planar) throw std::invalid_argument("pretrain_2d needs a planar model config");
  tc.validate();
  Dataset data = Dataset::from_slices(slices, tc.seed);
  const auto os = twin.generator.output_shape();
  if (data.item_shape() != os)
    throw std::invalid_argument("slice shape " + std::to_string(data.item_shape()[1]) + "x" +
                                std::to_string(data.item_shape()[2]) +
                                " does not match the generator output " + std::to_string(os[1]) +
                                "x" + std::to_string(os[2]));
  GanTrainer trainer(twin, tc, tc.lr_scratch);

  std::vector<Tensor<float>> real;
  if (ev.extractor)
    for (size_t i : eval_subset(slices.size(), ev.n_samples, ev.seed)) real.push_back(slices[i].pixels);
  EvalFn evaluate;
  if (ev.extractor)
    evaluate = [&](const nets::Generator<float>& g, MetricRow& row) {
      std::vector<Tensor<float>> fake;
      for (auto& t : generate(g, static_cast<int64_t>(real.size()), ev.seed))
        fake.push_back(t.reshaped({os[1], os[2]}));
      row.fid_ax = eval::image_fid(real, fake, *ev.extractor);
      row.fid_avg = row.fid_ax;
    };
  TrainResult res;
  res.metrics = run_loop(trainer, data, tc, evaluate, on_snapshot);
  res.checkpoint = trainer.to_archive(
      {{"kind", "pretrain2d"}, {"seed", tc.seed}, {"metrics", metrics_json(res.metrics)}});
  return res;
}

Prepared3D prepare_3d(const ModelConfig& cfg, const TrainConfig& tc, const Archive* init2d,
                      const inflation::InflationStrategy& strategy, inflation::Scope scope) {
  const double lr = init2d ? tc.lr_inflated : tc.lr_scratch;
  Prepared3D p{GanTrainer(cfg, tc, lr), std::nullopt};
  if (init2d) {
    GanModels src = load_models(*init2d, false);
    const auto expect = nets::planar_twin(cfg);
    const auto& sc = src.config;
    if (!sc.generator.planar || sc.architecture != cfg.architecture ||
        sc.generator.channels != cfg.generator.channels ||
        sc.generator.n_doublings != cfg.generator.n_doublings ||
        sc.generator.mapping_dim != cfg.generator.mapping_dim ||
        sc.generator.base_shape != expect.generator.base_shape)
      throw std::invalid_argument(
          "2D checkpoint architecture does not match the planar twin of the 3D model");
    auto& m = p.trainer.models();
    auto rg = inflation::apply_inflation(src.G.params(), m.G.params(), scope, strategy, tc.seed);
    auto rd = inflation::apply_inflation(src.D.params(), m.D.params(), scope, strategy, tc.seed);
    rg.entries.insert(rg.entries.end(), rd.entries.begin(), rd.entries.end());
    p.report = std::move(rg);
    p.trainer.sync_ema();
  }
  return p;
}

TrainResult train_3d(const ModelConfig& cfg, const TrainConfig& tc, const std::vector<Volume>& volumes,
                     const Archive* init2d, const inflation::InflationStrategy& strategy,
                     inflation::Scope scope, const EvalSetup& ev, const SnapshotFn& on_snapshot) {
  tc.validate();
  if (volumes.empty()) throw std::invalid_argument("train_3d: empty dataset");
  const auto os = cfg.generator.output_shape();
  for (const auto& v : volumes)
    if (v.dims() != os)
      throw std::invalid_argument("volume " + v.id + " has shape " +
                                  shape_str({v.depth(), v.height(), v.width()}) +
                                  " but the generator emits " + shape_str({os[0], os[1], os[2]}));
  Dataset data = Dataset::from_volumes(volumes, tc.seed);
  Prepared3D prep = prepare_3d(cfg, tc, init2d, strategy, scope);

  std::vector<Volume> real;
  if (ev.extractor)
    for (size_t i : eval_subset(volumes.size(), ev.n_samples, ev.seed)) real.push_back(volumes[i]);
  EvalFn evaluate;
  if (ev.extractor)
    evaluate = [&](const nets::Generator<float>& g, MetricRow& row) {
      auto fake = as_volumes(generate(g, static_cast<int64_t>(real.size()), ev.seed), "sample");
      const auto rep = eval::slice_fid(real, fake, *ev.extractor);
      row.fid_ax = rep.fid_ax;
      row.fid_sag = rep.fid_sag;
      row.fid_cor = rep.fid_cor;
      row.fid_avg = rep.fid_avg;
    };
  TrainResult res;
  res.metrics = run_loop(prep.trainer, data, tc, evaluate, on_snapshot);
  res.inflation = prep.report;
  nlohmann::ordered_json extra = {{"kind", "train3d"}, {"seed", tc.seed}};
  extra["inflation"] = init2d ? nlohmann::ordered_json{{"strategy", inflation::to_string(strategy.kind)},
                                                       {"T", strategy.T},
                                                       {"scope", inflation::to_string(scope)},
                                                       {"residual_init", inflation::to_string(strategy.residual_init)}}
                              : nlohmann::ordered_json(nullptr);
  extra["metrics"] = metrics_json(res.metrics);
  res.checkpoint = prep.trainer.to_archive(extra);
  return res;
}

template GanLosses<float> gan_losses<float>(const Var<float>&, const Var<float>&);
template GanLosses<double> gan_losses<double>(const Var<double>&, const Var<double>&);
template Var<float> r1_from_logits<float>(const Var<float>&, const Var<float>&, double);
template Var<double> r1_from_logits<double>(const Var<double>&, const Var<double>&, double);
template Var<float> r1_penalty<float>(const std::function<Var<float>(const Var<float>&)>&,
                                      const Tensor<float>&, double);
template Var<double> r1_penalty<double>(const std::function<Var<double>(const Var<double>&)>&,
                                        const Tensor<double>&, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace volgen::train
