#include "volgen/inflation.hpp"

#include <stdexcept>

#include "json.hpp"

namespace volgen::inflation {

void InflationStrategy::validate() const {
  if (T < 1) throw std::invalid_argument("NWI temperature T must be >= 1");
  if (!(sigma0 > 0)) throw std::invalid_argument("inflation sigma0 must be > 0");
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::None: return "NONE";
    case Kind::I1: return "I1";
    case Kind::I2: return "I2";
    case Kind::I3: return "I3";
    case Kind::ASC: return "ASC";
    case Kind::NWI: return "NWI";
  }
  return "NONE";
}

std::string to_string(Scope s) {
  switch (s) {
    case Scope::G: return "G";
    case Scope::D: return "D";
    case Scope::GAndD: return "G_AND_D";
  }
  return "G_AND_D";
}

std::string to_string(ResidualInit r) { return r == ResidualInit::Zeros ? "zeros" : "gaussian"; }

Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::None, Kind::I1, Kind::I2, Kind::I3, Kind::ASC, Kind::NWI})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown inflation strategy '" + s +
                              "' (expected NONE, I1, I2, I3, ASC or NWI)");
}

Scope parse_scope(const std::string& s) {
  for (Scope k : {Scope::G, Scope::D, Scope::GAndD})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown inflation scope '" + s + "' (expected G, D or G_AND_D)");
}

ResidualInit parse_residual_init(const std::string& s) {
  if (s == "gaussian") return ResidualInit::Gaussian;
  if (s == "zeros") return ResidualInit::Zeros;
  throw std::invalid_argument("unknown residual_init '" + s + "' (expected gaussian or zeros)");
}

std::vector<double> nwi_coefficients(int T, int64_t kd) {
  std::vector<double> a(static_cast<size_t>(kd), -1.0 / T);
  a[static_cast<size_t>(kd / 2)] = (2.0 * T - 1.0) / T;
  return a;
}

template <typename T>
Tensor<T> inflate(const Tensor<T>& w2_in, int64_t kd, const InflationStrategy& s, Rng& rng) {
  s.validate();
  Tensor<T> w2 = w2_in;
  if (w2.rank() == 5) {
    if (w2.dim(2) != 1)
      throw std::invalid_argument("inflate: source kernel must have depth 1, got " +
                                  shape_str(w2.shape()));
    w2 = w2.reshaped({w2.dim(0), w2.dim(1), w2.dim(3), w2.dim(4)});
  }
  if (w2.rank() != 4) throw std::invalid_argument("inflate: expected (C_O, C_I, k_h, k_w)");
  if (kd < 1) throw std::invalid_argument("inflate: depth must be >= 1");
  const int64_t co = w2.dim(0), ci = w2.dim(1), kh = w2.dim(2), kw = w2.dim(3);

  Tensor<T> w3({co, ci, kd, kh, kw});
  if (s.residual_init == ResidualInit::Gaussian)
    for (auto& v : w3.vec()) v = static_cast<T>(s.sigma0 * rng.normal());

  auto src = [&](int64_t o, int64_t i, int64_t a, int64_t b) {
    return w2[((o * ci + i) * kh + a) * kw + b];
  };
  auto write_depth = [&](int64_t d, double alpha, bool scaled) {
    for (int64_t o = 0; o < co; ++o)
      for (int64_t i = 0; i < ci; ++i)
        for (int64_t a = 0; a < kh; ++a)
          for (int64_t b = 0; b < kw; ++b) {
            const T v = src(o, i, a, b);
            w3.at(o, i, d, a, b) = scaled ? static_cast<T>(alpha * static_cast<double>(v)) : v;
          }
  };
  const int64_t c = kd / 2;
  switch (s.kind) {
    case Kind::None: break;
    case Kind::I1: write_depth(c, 1.0, false); break;
    case Kind::I2:
      if (kd < 2) throw std::invalid_argument("inflate: I2 needs kernel depth >= 2");
      write_depth(c - 1, 1.0, false);
      write_depth(c, 1.0, false);
      break;
    case Kind::I3:
      for (int64_t d = 0; d < kd; ++d) write_depth(d, 1.0, false);
      break;
    case Kind::ASC: {
      if (kd != kh || kh != kw)
        throw std::invalid_argument("inflate: ASC needs a cubic kernel, got depth " +
                                    std::to_string(kd) + " with 2D kernel " +
                                    std::to_string(kh) + "x" + std::to_string(kw));
      write_depth(c, 1.0, false);
      const int64_t ch = kh / 2, cw = kw / 2;
      for (int64_t o = 0; o < co; ++o)
        for (int64_t i = 0; i < ci; ++i)
          for (int64_t a = 0; a < kh; ++a)
            for (int64_t b = 0; b < kw; ++b) w3.at(o, i, a, ch, b) = src(o, i, a, b);
      for (int64_t o = 0; o < co; ++o)
        for (int64_t i = 0; i < ci; ++i)
          for (int64_t a = 0; a < kh; ++a)
            for (int64_t b = 0; b < kw; ++b) w3.at(o, i, a, b, cw) = src(o, i, a, b);
      break;
    }
    case Kind::NWI: {
      const auto alpha = nwi_coefficients(s.T, kd);
      for (int64_t d = 0; d < kd; ++d) write_depth(d, alpha[static_cast<size_t>(d)], true);
      break;
    }
  }
  return w3;
}

int64_t InflationReport::count(const std::string& disposition) const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.disposition == disposition;
  return n;
}

const LayerDisposition& InflationReport::find(const std::string& layer) const {
  for (const auto& e : entries)
    if (e.layer == layer) return e;
  throw std::out_of_range("no inflation entry for " + layer);
}

std::string InflationReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    arr.push_back({{"layer", e.layer}, {"disposition", e.disposition}, {"strategy", e.strategy}});
  return arr.dump(2);
}

namespace {

bool in_scope(const std::string& name, Scope scope) {
  const bool g = name.rfind("G.", 0) == 0;
  switch (scope) {
    case Scope::G: return g;
    case Scope::D: return !g;
    case Scope::GAndD: return true;
  }
  return true;
}

bool inflatable(const Shape& src, const Shape& dst) {
  return src.size() == 5 && dst.size() == 5 && src[2] == 1 && dst[2] > 1 && src[0] == dst[0] &&
         src[1] == dst[1] && src[3] == dst[3] && src[4] == dst[4];
}

}  // namespace

template <typename T>
InflationReport apply_inflation(const nets::ParameterStore<T>& src2d, nets::ParameterStore<T>& dst3d,
                                Scope scope, const InflationStrategy& strategy, uint64_t seed) {
  strategy.validate();
  InflationReport report;
  const std::string sname = to_string(strategy.kind);
  for (const auto& name : dst3d.names()) {
    auto& dst = dst3d.get(name);
    const Shape dshape = dst.shape();
    const bool deep = dshape.size() == 5 && dshape[2] > 1;
    const bool deep_conv = deep && name.ends_with(".weight");
    if (!in_scope(name, scope)) {
      report.entries.push_back({name, "fresh", sname});
      continue;
    }
    if (!src2d.contains(name)) {
      if (deep)
        throw std::invalid_argument("2D checkpoint has no layer '" + name + "' to inflate from");
      report.entries.push_back({name, "fresh", sname});
      continue;
    }
    const auto& src = src2d.get(name).value();
    if (deep_conv) {
      if (!inflatable(src.shape(), dshape))
        throw std::invalid_argument("2D layer '" + name + "' has shape " + shape_str(src.shape()) +
                                    ", incompatible with 3D shape " + shape_str(dshape));
      if (strategy.kind == Kind::None) {
        report.entries.push_back({name, "fresh", sname});
        continue;
      }
      Rng rng(seed ^ nets::name_hash(name));
      dst.mutable_value() = inflate(src, dshape[2], strategy, rng);
      report.entries.push_back({name, "inflated", sname});
    } else if (deep && inflatable(src.shape(), dshape)) {
      // A learned tensor with a depth axis (the generator's constant input):
      // every depth position starts from the 2D values.
      Tensor<T> out(dshape);
      const int64_t plane = dshape[3] * dshape[4];
      for (int64_t nc = 0; nc < dshape[0] * dshape[1]; ++nc)
        for (int64_t d = 0; d < dshape[2]; ++d)
          std::copy_n(src.data() + nc * plane, plane, out.data() + (nc * dshape[2] + d) * plane);
      dst.mutable_value() = std::move(out);
      report.entries.push_back({name, "replicated", sname});
    } else if (src.shape() == dshape) {
      dst.mutable_value() = src;
      report.entries.push_back({name, "copied", sname});
    } else {
      report.entries.push_back({name, "fresh", sname});
    }
  }
  return report;
}

template Tensor<float> inflate<float>(const Tensor<float>&, int64_t, const InflationStrategy&, Rng&);
template Tensor<double> inflate<double>(const Tensor<double>&, int64_t, const InflationStrategy&,
                                        Rng&);
template InflationReport apply_inflation<float>(const nets::ParameterStore<float>&,
                                                nets::ParameterStore<float>&, Scope,
                                                const InflationStrategy&, uint64_t);
template InflationReport apply_inflation<double>(const nets::ParameterStore<double>&,
                                                 nets::ParameterStore<double>&, Scope,
                                                 const InflationStrategy&, uint64_t);

}  // namespace volgen::inflation
