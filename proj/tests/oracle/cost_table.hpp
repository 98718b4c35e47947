#pragma once

// The per-layer cost tables written out as plain arithmetic, independent of
// the library's monomial representation. Also the printed form of every
// formula, for structural comparison.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>

#include <boost/rational.hpp>

namespace oracle {

using Q = boost::rational<std::int64_t>;
using CostFn = std::function<Q(Q B, Q L, Q d, Q h, Q t)>;

struct CostRow {
  std::string printed;
  CostFn eval;
};

// Key: (variant, metric, stage). Stage is "-" where it does not matter.
inline const std::map<std::tuple<std::string, std::string, std::string>, CostRow>& cost_table() {
  static const std::map<std::tuple<std::string, std::string, std::string>, CostRow> table = [] {
    std::map<std::tuple<std::string, std::string, std::string>, CostRow> t;
    const char* quadratic[] = {"standard", "rnd_emb_qk", "fixed_seq_qk", "static_emb_qk"};
    for (auto v : quadratic)
      t[{v, "complexity", "-"}] = {"BL^2d + BLd^2", [](Q B, Q L, Q d, Q, Q) { return B * L * L * d + B * L * d * d; }};
    for (auto v : {"mlp", "approx", "nonapprox"})
      t[{v, "complexity", "-"}] = {"BLd^2", [](Q B, Q L, Q d, Q, Q) { return B * L * d * d; }};

    auto standard_prefill = [](Q B, Q L, Q d, Q, Q) { return 4 * B * L * L * d + 6 * B * L * d * d; };
    auto standard_decode = [](Q B, Q L, Q d, Q, Q) { return 6 * B * d * d + 4 * B * L * d; };
    for (auto v : {"standard", "static_emb_qk"}) {
      t[{v, "flops", "prefill"}] = {"4BL^2d + 6BLd^2", standard_prefill};
      t[{v, "flops", "decode"}] = {"6Bd^2 + 4BLd", standard_decode};
    }
    for (auto v : {"mlp", "nonapprox"}) {
      t[{v, "flops", "prefill"}] = {"6BLd^2", [](Q B, Q L, Q d, Q, Q) { return 6 * B * L * d * d; }};
      t[{v, "flops", "decode"}] = {"6Bd^2", [](Q B, Q, Q d, Q, Q) { return 6 * B * d * d; }};
    }
    t[{"approx", "flops", "prefill"}] = {"14BLd^2", [](Q B, Q L, Q d, Q, Q) { return 14 * B * L * d * d; }};
    t[{"approx", "flops", "decode"}] = {"10Bd^2", [](Q B, Q, Q d, Q, Q) { return 10 * B * d * d; }};
    for (auto v : {"rnd_emb_qk", "fixed_seq_qk"}) {
      t[{v, "flops", "prefill"}] = {"2L^2d + 2BL^2d + 6BLd^2", [](Q B, Q L, Q d, Q, Q) {
                                      return 2 * L * L * d + 2 * B * L * L * d + 6 * B * L * d * d;
                                    }};
      t[{v, "flops", "decode"}] = {"2Ld + 2BLd + 6Bd^2",
                                   [](Q B, Q L, Q d, Q, Q) { return 2 * L * d + 2 * B * L * d + 6 * B * d * d; }};
    }

    for (auto v : {"standard", "static_emb_qk"})
      t[{v, "activation_memory", "-"}] = {"8BLd/t + 2BL^2h/t",
                                          [](Q B, Q L, Q d, Q h, Q t) { return (8 * B * L * d + 2 * B * L * L * h) / t; }};
    t[{"mlp", "activation_memory", "-"}] = {"8BLd/t", [](Q B, Q L, Q d, Q, Q t) { return 8 * B * L * d / t; }};
    t[{"approx", "activation_memory", "-"}] = {
        "11BLd/t + 3Bd^2/ht", [](Q B, Q L, Q d, Q h, Q t) { return 11 * B * L * d / t + 3 * B * d * d / (h * t); }};
    t[{"nonapprox", "activation_memory", "-"}] = {
        "8BLd/t + 4BLh/t", [](Q B, Q L, Q d, Q h, Q t) { return (8 * B * L * d + 4 * B * L * h) / t; }};
    for (auto v : {"rnd_emb_qk", "fixed_seq_qk"})
      t[{v, "activation_memory", "-"}] = {"4BLd/t + 8Ld/t + 2L^2h/t", [](Q B, Q L, Q d, Q h, Q t) {
                                            return (4 * B * L * d + 8 * L * d + 2 * L * L * h) / t;
                                          }};

    for (auto v : {"standard", "static_emb_qk"})
      t[{v, "cache_size", "-"}] = {"4BLd", [](Q B, Q L, Q d, Q, Q) { return 4 * B * L * d; }};
    t[{"mlp", "cache_size", "-"}] = {"0", [](Q, Q, Q, Q, Q) { return Q(0); }};
    t[{"approx", "cache_size", "-"}] = {"6Bd + 4Bd^2/h", [](Q B, Q, Q d, Q h, Q) { return 6 * B * d + 4 * B * d * d / h; }};
    t[{"nonapprox", "cache_size", "-"}] = {"2Bd + 4Bh", [](Q B, Q, Q d, Q h, Q) { return 2 * B * d + 4 * B * h; }};
    for (auto v : {"rnd_emb_qk", "fixed_seq_qk"})
      t[{v, "cache_size", "-"}] = {"2BLd + 2Ld", [](Q B, Q L, Q d, Q, Q) { return 2 * (B + 1) * L * d; }};
    return t;
  }();
  return table;
}

}  // namespace oracle
