#include "datn/cost.hpp"

#include <algorithm>
#include <sstream>
#include <tuple>

#include "datn/errors.hpp"

namespace datn::cost {

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::complexity: return "complexity";
    case Metric::flops: return "flops";
    case Metric::activation_memory: return "activation_memory";
    case Metric::cache_size: return "cache_size";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  for (Metric m : kAllMetrics)
    if (metric_name(m) == name) return m;
  if (name == "memory") return Metric::activation_memory;
  if (name == "cache") return Metric::cache_size;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

std::string_view stage_name(Stage s) { return s == Stage::prefill ? "prefill" : "decode"; }

Stage parse_stage(std::string_view name) {
  if (name == "prefill") return Stage::prefill;
  if (name == "decode") return Stage::decode;
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::string_view unit(Metric m) {
  switch (m) {
    case Metric::complexity: return "ops";
    case Metric::flops: return "FLOPs";
    default: return "bytes";
  }
}

void validate(const CostQuery& q) {
  if (q.B < 1 || q.L < 1 || q.d < 1 || q.h < 1 || q.t < 1) {
    throw ConfigError("cost query sizes B, L, d, h, t must be positive");
  }
  if (q.d % q.h != 0) throw ConfigError("d must be divisible by h");
}

namespace {

// Shorthand: term(c, B, L, d, h, t), optionally over a denominator.
Monomial term(std::int64_t c, int b, int l, int d, int h = 0, int t = 0, std::int64_t den = 1) {
  return {Rational(c, den), b, l, d, h, t};
}

std::int64_t power(std::int64_t x, int e) {
  std::int64_t r = 1;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

}  // namespace

Formula formula(Variant v, Metric m, Stage s, bool precomputed) {
  const bool shadow = uses_shadow(v);
  const bool quadratic = v == Variant::standard || v == Variant::static_emb_qk || shadow;
  switch (m) {
    case Metric::complexity:
      if (quadratic) return {term(1, 1, 2, 1), term(1, 1, 1, 2)};
      return {term(1, 1, 1, 2)};

    case Metric::flops:
      if (s == Stage::prefill) {
        switch (v) {
          case Variant::mlp:
          case Variant::nonapprox: return {term(6, 1, 1, 2)};
          case Variant::approx: return {term(14, 1, 1, 2)};
          case Variant::rnd_emb_qk:
          case Variant::fixed_seq_qk:
            if (precomputed) return {term(2, 0, 2, 1), term(2, 1, 1, 2)};
            return {term(2, 0, 2, 1), term(2, 1, 2, 1), term(6, 1, 1, 2)};
          default: return {term(4, 1, 2, 1), term(6, 1, 1, 2)};
        }
      }
      switch (v) {
        case Variant::mlp:
        case Variant::nonapprox: return {term(6, 1, 0, 2)};
        case Variant::approx: return {term(10, 1, 0, 2)};
        case Variant::rnd_emb_qk:
        case Variant::fixed_seq_qk:
          if (precomputed) return {term(2, 1, 1, 1), term(2, 0, 0, 2)};
          return {term(2, 0, 1, 1), term(2, 1, 1, 1), term(6, 1, 0, 2)};
        default: return {term(6, 1, 0, 2), term(4, 1, 1, 1)};
      }

    case Metric::activation_memory:
      switch (v) {
        case Variant::mlp: return {term(8, 1, 1, 1, 0, -1)};
        case Variant::approx: return {term(11, 1, 1, 1, 0, -1), term(3, 1, 0, 2, -1, -1)};
        case Variant::nonapprox: return {term(8, 1, 1, 1, 0, -1), term(4, 1, 1, 0, 1, -1)};
        case Variant::rnd_emb_qk:
        case Variant::fixed_seq_qk:
          return {term(4, 1, 1, 1, 0, -1), term(8, 0, 1, 1, 0, -1), term(2, 0, 2, 0, 1, -1)};
        default: return {term(8, 1, 1, 1, 0, -1), term(2, 1, 2, 0, 1, -1)};
      }

    case Metric::cache_size:
      switch (v) {
        case Variant::mlp: return {};
        case Variant::approx: return {term(6, 1, 0, 1), term(4, 1, 0, 2, -1)};
        case Variant::nonapprox: return {term(2, 1, 0, 1), term(4, 1, 0, 0, 1)};
        case Variant::rnd_emb_qk:
        case Variant::fixed_seq_qk: return {term(2, 1, 1, 1), term(2, 0, 1, 1)};
        default: return {term(4, 1, 1, 1)};
      }
  }
  return {};
}

Rational evaluate(const Monomial& m, const CostQuery& q) {
  Rational r = m.coeff;
  auto apply = [&](std::int64_t x, int e) {
    if (e >= 0) r *= power(x, e);
    else r /= power(x, -e);
  };
  apply(q.B, m.b);
  apply(q.L, m.l);
  apply(q.d, m.d);
  apply(q.h, m.h);
  apply(q.t, m.t);
  return r;
}

Rational evaluate(const Formula& f, const CostQuery& q) {
  Rational sum = 0;
  for (const auto& m : f) sum += evaluate(m, q);
  return sum;
}

std::string to_string(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

std::string to_string(const Formula& f) {
  if (f.empty()) return "0";
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Monomial& m = f[i];
    if (i) out += " + ";
    std::string num, den;
    if (m.coeff.numerator() != 1) num += std::to_string(m.coeff.numerator());
    if (m.coeff.denominator() != 1) den += std::to_string(m.coeff.denominator());
    auto var = [&](char c, int e) {
      std::string& side = e > 0 ? num : den;
      const int a = e > 0 ? e : -e;
      if (a == 0) return;
      side += c;
      if (a > 1) side += "^" + std::to_string(a);
    };
    var('B', m.b);
    var('L', m.l);
    var('d', m.d);
    var('h', m.h);
    var('t', m.t);
    out += num.empty() ? "1" : num;
    if (!den.empty()) out += "/" + den;
  }
  return out;
}

CostReport evaluate(const CostQuery& q, Metric m) {
  validate(q);
  CostReport r;
  r.query = q;
  r.metric = m;
  r.terms = formula(q.variant, m, q.stage, q.precomputed);
  r.value = 0;
  for (const auto& t : r.terms) {
    r.term_values.push_back(evaluate(t, q));
    r.value += r.term_values.back();
  }
  return r;
}

CostReport time_complexity(const CostQuery& q) { return evaluate(q, Metric::complexity); }
CostReport flops_per_iter(const CostQuery& q) { return evaluate(q, Metric::flops); }
CostReport activation_memory(const CostQuery& q) { return evaluate(q, Metric::activation_memory); }
CostReport cache_size(const CostQuery& q) { return evaluate(q, Metric::cache_size); }

namespace {

auto sort_key(const CostReport& r) {
  const auto& q = r.query;
  const int stage = depends_on_stage(r.metric) ? static_cast<int>(q.stage) : -1;
  return std::make_tuple(static_cast<int>(q.variant), static_cast<int>(r.metric), stage, q.precomputed, q.B, q.L,
                         q.d, q.h, q.t);
}

}  // namespace

std::vector<CostReport> sweep(const std::vector<CostQuery>& queries, const std::vector<Metric>& metrics) {
  std::vector<CostReport> rows;
  for (const auto& q : queries)
    for (Metric m : metrics) rows.push_back(evaluate(q, m));
  std::ranges::sort(rows, [](const CostReport& a, const CostReport& b) { return sort_key(a) < sort_key(b); });
  auto same = [](const CostReport& a, const CostReport& b) { return sort_key(a) == sort_key(b); };
  rows.erase(std::unique(rows.begin(), rows.end(), same), rows.end());
  return rows;
}

std::string to_csv(const std::vector<CostReport>& rows) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  for (const auto& r : rows) {
    const auto& q = r.query;
    os << variant_name(q.variant) << "," << metric_name(r.metric) << ","
       << (depends_on_stage(r.metric) ? stage_name(q.stage) : "-") << "," << q.B << "," << q.L << "," << q.d << ","
       << q.h << "," << q.t << "," << to_string(r.value) << "\n";
  }
  return os.str();
}

}  // namespace datn::cost
