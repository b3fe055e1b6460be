#include "volgen/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace volgen::config {

using json = nlohmann::ordered_json;

namespace {

json index3(Index3 v) { return json::array({v[0], v[1], v[2]}); }

// Recursively overlays `user` onto `base`, rejecting keys absent from base.
void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object())
    throw ConfigError("config section '" + (path.empty() ? std::string("<root>") : path) +
                      "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      overlay(slot, it.value(), key);
    } else if (slot.is_object()) {
      throw ConfigError("config key '" + key + "' must be an object");
    } else {
      slot = it.value();
    }
  }
}

template <typename V>
V get(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  try {
    return node->get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + dotted + "' has the wrong type (got " +
                      std::string(node->type_name()) + ": " + node->dump() + ")");
  }
}

Index3 get_index3(const json& doc, const std::string& dotted) {
  const auto v = get<std::vector<int64_t>>(doc, dotted);
  if (v.size() != 3) throw ConfigError("config key '" + dotted + "' needs 3 integers");
  for (auto e : v)
    if (e < 1) throw ConfigError("config key '" + dotted + "' needs positive extents");
  return {v[0], v[1], v[2]};
}

std::pair<float, float> get_range(const json& doc, const std::string& dotted) {
  const auto v = get<std::vector<float>>(doc, dotted);
  if (v.size() != 2 || !(v[0] < v[1]))
    throw ConfigError("config key '" + dotted + "' needs [lo, hi] with lo < hi");
  return {v[0], v[1]};
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

int log2_exact(int64_t ratio) {
  int n = 0;
  while ((int64_t{1} << n) < ratio) ++n;
  return (int64_t{1} << n) == ratio ? n : -1;
}

}  // namespace

json default_document() {
  const RunConfig d;
  const train::TrainConfig& t = d.train;
  return json{
      {"data",
       {{"manifest", nullptr},
        {"phantom",
         {{"seed", d.data.phantom.seed},
          {"count", d.data.phantom.count},
          {"n_ellipsoids", d.data.phantom.n_ellipsoids},
          {"intensity_range", {d.data.phantom.intensity_lo, d.data.phantom.intensity_hi}}}},
        {"hu_window", {d.data.hu_window.lo, d.data.hu_window.hi}},
        {"target_shape", index3(d.data.target_shape)},
        {"plane", to_string(d.data.plane)}}},
      {"model",
       {{"variant", nets::to_string(d.model.variant)},
        {"channels", d.model.channels},
        {"base_shape", index3(d.model.base_shape)},
        {"mapping_dim", d.model.mapping_dim}}},
      {"train",
       {{"gamma", t.gamma},
        {"batch", t.batch},
        {"lr_scratch", t.lr_scratch},
        {"lr_inflated", t.lr_inflated},
        {"total_kimg", nullptr},
        {"seed", t.seed},
        {"snapshot_every_kimg", t.snapshot_every_kimg}}},
      {"inflate",
       {{"strategy", inflation::to_string(d.inflate.strategy.kind)},
        {"T", d.inflate.strategy.T},
        {"scope", inflation::to_string(d.inflate.scope)},
        {"residual_init", inflation::to_string(d.inflate.strategy.residual_init)}}},
      {"eval", {{"extractor", d.eval.extractor}, {"n_samples", d.eval.n_samples}}},
  };
}

RunConfig parse(const json& user) {
  json doc = default_document();
  overlay(doc, user, "");

  RunConfig c;
  const json& manifest = doc["data"]["manifest"];
  if (!manifest.is_null()) c.data.manifest = get<std::string>(doc, "data.manifest");
  c.data.phantom.seed = get<uint64_t>(doc, "data.phantom.seed");
  c.data.phantom.count = get<int64_t>(doc, "data.phantom.count");
  if (c.data.phantom.count < 0) throw ConfigError("config key 'data.phantom.count' must be >= 0");
  c.data.phantom.n_ellipsoids = get<int>(doc, "data.phantom.n_ellipsoids");
  if (c.data.phantom.n_ellipsoids < 1)
    throw ConfigError("config key 'data.phantom.n_ellipsoids' must be >= 1");
  std::tie(c.data.phantom.intensity_lo, c.data.phantom.intensity_hi) =
      get_range(doc, "data.phantom.intensity_range");
  std::tie(c.data.hu_window.lo, c.data.hu_window.hi) = get_range(doc, "data.hu_window");
  c.data.target_shape = get_index3(doc, "data.target_shape");
  c.data.plane = wrap("data.plane", [&] { return parse_plane(get<std::string>(doc, "data.plane")); });

  c.model.variant = wrap("model.variant", [&] {
    return nets::parse_architecture(get<std::string>(doc, "model.variant"));
  });
  c.model.channels = get<int64_t>(doc, "model.channels");
  if (c.model.channels < 2 || c.model.channels % 2 != 0)
    throw ConfigError("config key 'model.channels' must be an even integer >= 2");
  c.model.base_shape = get_index3(doc, "model.base_shape");
  c.model.mapping_dim = get<int64_t>(doc, "model.mapping_dim");
  if (c.model.mapping_dim < 1) throw ConfigError("config key 'model.mapping_dim' must be >= 1");

  c.train.gamma = get<double>(doc, "train.gamma");
  c.train.batch = get<int64_t>(doc, "train.batch");
  c.train.lr_scratch = get<double>(doc, "train.lr_scratch");
  c.train.lr_inflated = get<double>(doc, "train.lr_inflated");
  if (!doc["train"]["total_kimg"].is_null()) {
    c.train.total_kimg = get<double>(doc, "train.total_kimg");
    c.total_kimg_set = true;
  }
  c.train.seed = get<uint64_t>(doc, "train.seed");
  c.train.snapshot_every_kimg = get<double>(doc, "train.snapshot_every_kimg");
  c.train.plane = c.data.plane;
  wrap("train", [&] {
    c.train.validate();
    return 0;
  });

  c.inflate.strategy.kind = wrap("inflate.strategy", [&] {
    return inflation::parse_kind(get<std::string>(doc, "inflate.strategy"));
  });
  c.inflate.strategy.T = get<int>(doc, "inflate.T");
  c.inflate.scope = wrap("inflate.scope", [&] {
    return inflation::parse_scope(get<std::string>(doc, "inflate.scope"));
  });
  c.inflate.strategy.residual_init = wrap("inflate.residual_init", [&] {
    return inflation::parse_residual_init(get<std::string>(doc, "inflate.residual_init"));
  });
  wrap("inflate", [&] {
    c.inflate.strategy.validate();
    return 0;
  });

  c.eval.extractor = get<std::string>(doc, "eval.extractor");
  c.eval.n_samples = get<int64_t>(doc, "eval.n_samples");
  if (c.eval.n_samples < 2) throw ConfigError("config key 'eval.n_samples' must be >= 2");

  wrap("model", [&] {
    c.model_config();
    return 0;
  });
  return c;
}

void apply_overrides(json& doc, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + s + "' must look like section.key=value");
    const std::string key = s.substr(0, eq);
    const std::string text = s.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->is_object()) node = &(*node = json::object());
      node = &(*node)[parts[i]];
    }
    if (!node->is_object()) *node = json::object();
    (*node)[parts.back()] = value;
  }
}

RunConfig load(const std::string& path, const std::vector<std::string>& sets) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    try {
      doc = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
  }
  apply_overrides(doc, sets);
  return parse(doc);
}

nets::ModelConfig RunConfig::model_config() const {
  int n = -1;
  for (int a = 0; a < 3; ++a) {
    const int64_t base = model.base_shape[a], target = data.target_shape[a];
    const int k = target % base == 0 ? log2_exact(target / base) : -1;
    if (k < 0 || (n >= 0 && k != n))
      throw ConfigError("data.target_shape must equal model.base_shape * 2^n on every axis");
    n = k;
  }
  return nets::make_model_config(model.variant, model.base_shape, n, model.channels,
                                 model.mapping_dim);
}

train::TrainConfig RunConfig::train_for(double default_kimg) const {
  train::TrainConfig t = train;
  if (!total_kimg_set) t.total_kimg = default_kimg;
  return t;
}

json resolved(const RunConfig& c, double default_kimg) {
  json doc = default_document();
  doc["data"]["manifest"] = c.data.manifest ? json(*c.data.manifest) : json(nullptr);
  doc["data"]["phantom"] = {{"seed", c.data.phantom.seed},
                            {"count", c.data.phantom.count},
                            {"n_ellipsoids", c.data.phantom.n_ellipsoids},
                            {"intensity_range", {c.data.phantom.intensity_lo, c.data.phantom.intensity_hi}}};
  doc["data"]["hu_window"] = {c.data.hu_window.lo, c.data.hu_window.hi};
  doc["data"]["target_shape"] = index3(c.data.target_shape);
  doc["data"]["plane"] = to_string(c.data.plane);
  doc["model"] = {{"variant", nets::to_string(c.model.variant)},
                  {"channels", c.model.channels},
                  {"base_shape", index3(c.model.base_shape)},
                  {"mapping_dim", c.model.mapping_dim}};
  const train::TrainConfig t = c.train_for(default_kimg);
  doc["train"] = {{"gamma", t.gamma},
                  {"batch", t.batch},
                  {"lr_scratch", t.lr_scratch},
                  {"lr_inflated", t.lr_inflated},
                  {"total_kimg", t.total_kimg},
                  {"seed", t.seed},
                  {"snapshot_every_kimg", t.snapshot_every_kimg}};
  doc["inflate"] = {{"strategy", inflation::to_string(c.inflate.strategy.kind)},
                    {"T", c.inflate.strategy.T},
                    {"scope", inflation::to_string(c.inflate.scope)},
                    {"residual_init", inflation::to_string(c.inflate.strategy.residual_init)}};
  doc["eval"] = {{"extractor", c.eval.extractor}, {"n_samples", c.eval.n_samples}};
  return doc;
}

std::vector<Volume> load_volumes(const DataSection& data) {
  std::vector<Volume> out;
  if (data.manifest) {
    const auto m = read_manifest(*data.manifest);
    const std::filesystem::path dir = std::filesystem::path(*data.manifest).parent_path();
    for (const auto& r : m.records) {
      Volume v = read_volume(dir / r.path);
      v.modality = r.modality;
      out.push_back(preprocess(v, data.hu_window, data.target_shape));
    }
  } else {
    for (int64_t i = 0; i < data.phantom.count; ++i) {
      PhantomSpec spec;
      spec.seed = data.phantom.seed + static_cast<uint64_t>(i);
      spec.shape = data.target_shape;
      spec.n_ellipsoids = data.phantom.n_ellipsoids;
      spec.intensity_lo = data.phantom.intensity_lo;
      spec.intensity_hi = data.phantom.intensity_hi;
      out.push_back(preprocess(generate_phantom(spec), data.hu_window, data.target_shape));
    }
  }
  if (out.empty()) throw ConfigError("empty dataset requested");
  return out;
}

}  // namespace volgen::config
