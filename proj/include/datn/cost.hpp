#pragma once

// Analytical per-layer cost of each token mixer: time complexity, GEMM FLOPs
// per iteration, half-precision activation memory and inference cache size.
// Formulas are kept as monomials in B, L, d, h, t with exact rational
// coefficients and evaluated without rounding.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <boost/rational.hpp>

#include "datn/attention.hpp"

namespace datn::cost {

using Rational = boost::rational<std::int64_t>;

enum class Metric { complexity, flops, activation_memory, cache_size };
enum class Stage { prefill, decode };

inline constexpr Metric kAllMetrics[] = {Metric::complexity, Metric::flops, Metric::activation_memory,
                                         Metric::cache_size};

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);
/// FLOPs are the only stage-dependent metric.
constexpr bool depends_on_stage(Metric m) { return m == Metric::flops; }
std::string_view unit(Metric m);

/// coeff * B^b L^l d^d h^h t^t; exponents may be negative.
struct Monomial {
  Rational coeff;
  int b = 0, l = 0, d = 0, h = 0, t = 0;
  friend bool operator==(const Monomial&, const Monomial&) = default;
};

using Formula = std::vector<Monomial>;

struct CostQuery {
  Variant variant = Variant::standard;
  std::int64_t B = 1, L = 1, d = 1, h = 1, t = 1;
  Stage stage = Stage::prefill;
  /// RndEmbQK/FixedSeqQK FLOPs with attention scores computed ahead of time.
  bool precomputed = false;
};

/// Throws ConfigError for non-positive sizes or d not divisible by h.
void validate(const CostQuery& q);

/// Printed formula for one variant and metric.
Formula formula(Variant v, Metric m, Stage s = Stage::prefill, bool precomputed = false);

Rational evaluate(const Formula& f, const CostQuery& q);
Rational evaluate(const Monomial& m, const CostQuery& q);

/// e.g. "4BL^2d + 6BLd^2", "8BLd/t + 2BL^2h/t", "0".
std::string to_string(const Formula& f);
/// Integer text when the denominator is 1, "n/d" otherwise.
std::string to_string(const Rational& r);

struct CostReport {
  CostQuery query;
  Metric metric = Metric::complexity;
  Formula terms;
  std::vector<Rational> term_values;
  Rational value;
};

CostReport evaluate(const CostQuery& q, Metric m);
CostReport time_complexity(const CostQuery& q);
CostReport flops_per_iter(const CostQuery& q);
CostReport activation_memory(const CostQuery& q);
CostReport cache_size(const CostQuery& q);

/// Every (query, metric) pair, sorted by variant, metric, stage, B, L, d, h, t
/// so that the result does not depend on input order. Duplicates collapse.
std::vector<CostReport> sweep(const std::vector<CostQuery>& queries, const std::vector<Metric>& metrics);

inline constexpr std::string_view kCsvHeader = "variant,metric,stage,B,L,d,h,t,value";

/// Header plus one row per report. Stage-independent metrics print "-".
std::string to_csv(const std::vector<CostReport>& rows);

}  // namespace datn::cost
