#include <algorithm>
#include <cmath>
#include <string>

#include "datn/diagnostics.hpp"
#include "datn/errors.hpp"

namespace datn {

namespace {

template <typename T>
std::size_t square_side(const Tensor<T>& a, const char* what) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1) || a.dim(0) == 0) {
    throw ShapeError(std::string(what) + " needs a non-empty square matrix, got " + shape_string(a.shape()));
  }
  return a.dim(0);
}

// Copy of block b of a [n x L x L] tensor, optionally rescaled.
template <typename T>
Tensor<double> block(const Tensor<T>& t, std::size_t b, double scale = 1.0) {
  const std::size_t len = t.dim(1);
  Tensor<double> out({len, len});
  const T* src = t.raw() + b * len * len;
  for (std::size_t i = 0; i < len * len; ++i) out[i] = static_cast<double>(src[i]) * scale;
  return out;
}

bool has_negative(const Tensor<double>& a) {
  return std::ranges::any_of(a.data(), [](double x) { return x < 0; });
}

}  // namespace

template <typename T>
double entropy(const Tensor<T>& a, bool per_row) {
  const std::size_t len = square_side(a, "entropy");
  double total = 0;
  for (std::size_t i = 0; i < len * len; ++i) {
    const double x = static_cast<double>(a[i]);
    if (x < 0) throw NumericalError("entropy of a matrix with negative entries");
    if (x > 0) total -= x * std::log(x);
  }
  return per_row ? total / static_cast<double>(len) : total;
}

template <typename T>
double concentration(const Tensor<T>& a) {
  square_side(a, "concentration");
  double s = 0;
  for (T x : a.data()) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

template <typename T>
double head_diversity(const Tensor<T>& heads) {
  if (heads.rank() != 3 || heads.dim(1) != heads.dim(2)) {
    throw ShapeError("head diversity needs [heads x L x L], got " + shape_string(heads.shape()));
  }
  const std::size_t n = heads.dim(0), len = heads.dim(1);
  if (n < 2) throw ShapeError("head diversity needs at least two heads");
  double total = 0;
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double mean = 0;
      for (std::size_t h = 0; h < n; ++h) mean += static_cast<double>(heads(h, i, j));
      mean /= static_cast<double>(n);
      double var = 0;
      for (std::size_t h = 0; h < n; ++h) {
        const double dev = static_cast<double>(heads(h, i, j)) - mean;
        var += dev * dev;
      }
      total += std::sqrt(var / static_cast<double>(n));
    }
  return total * 2.0 / (static_cast<double>(len) * static_cast<double>(len + 1));
}

template <typename T>
double sink(const Tensor<T>& a) {
  const std::size_t len = square_side(a, "sink");
  double s = 0;
  for (std::size_t i = 0; i < len; ++i) s += static_cast<double>(a(i, 0));
  return s / static_cast<double>(len);
}

template <typename T>
double local_focus(const Tensor<T>& a, std::size_t n) {
  const std::size_t len = square_side(a, "local focus");
  if (len <= n) {
    throw ShapeError("local focus at distance " + std::to_string(n) + " needs more than " + std::to_string(n) +
                     " positions");
  }
  double s = 0;
  for (std::size_t i = n; i < len; ++i) s += static_cast<double>(a(i, i - n));
  return s / static_cast<double>(len - n);
}

std::vector<Indicators> normalize_for_plot(const std::vector<Indicators>& layers) {
  std::vector<Indicators> out = layers;
  auto minmax = [&](auto get, auto set) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& x : layers)
      if (auto v = get(x)) lo = std::min(lo, *v), hi = std::max(hi, *v);
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (auto v = get(layers[i])) set(out[i], hi > lo ? (*v - lo) / (hi - lo) : 0.0);
  };
  minmax([](const Indicators& x) { return x.entropy; }, [](Indicators& x, double v) { x.entropy = v; });
  minmax([](const Indicators& x) { return std::optional<double>(x.conc); }, [](Indicators& x, double v) { x.conc = v; });
  minmax([](const Indicators& x) { return x.head_div; }, [](Indicators& x, double v) { x.head_div = v; });
  for (auto& x : out)
    for (auto& f : x.loc_foc)
      if (f) *f *= 2;
  return out;
}

template <typename T>
IndicatorReport indicator_report(const ForwardCapture<T>& capture, const ModelConfig& cfg, std::size_t sequences,
                                 const IndicatorOptions& opt) {
  if (capture.layers.empty()) throw ShapeError("indicator report needs a captured forward");
  const std::size_t nh = cfg.n_heads;
  IndicatorReport rep;
  rep.sequences = sequences;
  rep.per_row_entropy = opt.per_row_entropy;
  std::vector<Indicators> layer_raw;

  for (std::size_t l = 0; l < capture.layers.size(); ++l) {
    const Tensor<T>& att = capture.layers[l].attention;
    if (att.rank() != 3 || att.dim(0) != sequences * nh) {
      throw ShapeError("layer " + std::to_string(l) + " capture " + shape_string(att.shape()) + " does not hold " +
                       std::to_string(sequences) + " x " + std::to_string(nh) + " heads");
    }
    const std::size_t len = att.dim(1);
    rep.seq_len = len;
    const bool split = cfg.variant_map[l] == Variant::approx && cfg.approx_mode == ApproxMode::split;
    const double scale = split ? 1.0 / 3.0 : 1.0;
    const double inv_s = 1.0 / static_cast<double>(sequences);

    std::optional<double> head_div;
    if (nh >= 2) {
      double hd = 0;
      for (std::size_t s = 0; s < sequences; ++s) {
        Tensor<double> group({nh, len, len});
        for (std::size_t h = 0; h < nh; ++h) {
          Tensor<double> b = block(att, s * nh + h, scale);
          std::copy(b.data().begin(), b.data().end(), group.raw() + h * len * len);
        }
        hd += head_diversity(group);
      }
      head_div = hd * inv_s;
    }

    Indicators layer;
    layer.head_div = head_div;
    layer.entropy = 0.0;
    for (std::size_t n = 0; n <= kLocalFocusMax; ++n)
      if (len > n) layer.loc_foc[n] = 0.0;

    for (std::size_t h = 0; h < nh; ++h) {
      Indicators v;
      v.head_div = head_div;
      double ent = 0;
      bool ent_defined = true;
      std::array<double, kLocalFocusMax + 1> lf{};
      for (std::size_t s = 0; s < sequences; ++s) {
        Tensor<double> a = block(att, s * nh + h, scale);
        if (ent_defined && has_negative(a)) ent_defined = false;
        if (ent_defined) ent += entropy(a, opt.per_row_entropy);
        v.conc += concentration(a);
        v.sink += sink(a);
        for (std::size_t n = 0; n <= kLocalFocusMax; ++n)
          if (len > n) lf[n] += local_focus(a, n);
      }
      if (ent_defined) v.entropy = ent * inv_s;
      v.conc *= inv_s;
      v.sink *= inv_s;
      for (std::size_t n = 0; n <= kLocalFocusMax; ++n)
        if (len > n) v.loc_foc[n] = lf[n] * inv_s;

      const double w = 1.0 / static_cast<double>(nh);
      if (layer.entropy && v.entropy) *layer.entropy += *v.entropy * w;
      else layer.entropy.reset();
      layer.conc += v.conc * w;
      layer.sink += v.sink * w;
      for (std::size_t n = 0; n <= kLocalFocusMax; ++n)
        if (v.loc_foc[n]) *layer.loc_foc[n] += *v.loc_foc[n] * w;
      rep.heads.push_back({l, h, v});
    }
    layer_raw.push_back(layer);
  }

  const auto norm = normalize_for_plot(layer_raw);
  for (std::size_t l = 0; l < layer_raw.size(); ++l) rep.layers.push_back({l, layer_raw[l], norm[l]});
  return rep;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

template <typename T>
std::vector<PrelogitLayerStats> prelogit_stats(const ForwardCapture<T>& capture) {
  std::vector<PrelogitLayerStats> out;
  for (std::size_t l = 0; l < capture.layers.size(); ++l) {
    const Tensor<T>& p = capture.layers[l].prelogits;
    if (p.empty()) continue;
    const std::size_t blocks = p.dim(0), len = p.dim(1);
    std::vector<double> v;
    v.reserve(blocks * len * (len + 1) / 2);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j <= i; ++j) v.push_back(static_cast<double>(p(b, i, j)));
    std::sort(v.begin(), v.end());
    PrelogitLayerStats s;
    s.layer = l;
    s.count = v.size();
    s.min = v.front();
    s.max = v.back();
    s.max_abs = std::max(std::abs(s.min), std::abs(s.max));
    for (std::size_t k = 0; k < kPrelogitQuantiles.size(); ++k) s.quantiles[k] = quantile(v, kPrelogitQuantiles[k]);
    out.push_back(s);
  }
  if (out.empty()) throw ShapeError("no layer captured prelogits");
  return out;
}

#define DATN_INSTANTIATE_DIAGNOSTICS(T)                                                                 \
  template double entropy<T>(const Tensor<T>&, bool);                                                   \
  template double concentration<T>(const Tensor<T>&);                                                   \
  template double head_diversity<T>(const Tensor<T>&);                                                  \
  template double sink<T>(const Tensor<T>&);                                                            \
  template double local_focus<T>(const Tensor<T>&, std::size_t);                                        \
  template IndicatorReport indicator_report<T>(const ForwardCapture<T>&, const ModelConfig&, std::size_t, \
                                               const IndicatorOptions&);                                \
  template std::vector<PrelogitLayerStats> prelogit_stats<T>(const ForwardCapture<T>&);

DATN_INSTANTIATE_DIAGNOSTICS(float)
DATN_INSTANTIATE_DIAGNOSTICS(double)

}  // namespace datn
