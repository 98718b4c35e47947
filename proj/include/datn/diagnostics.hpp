#pragma once

// Attention-pattern indicators over captured [L x L] mixing matrices, and
// distribution statistics of pre-softmax activations.

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "datn/model.hpp"
#include "datn/tensor.hpp"

namespace datn {

/// Matrix views below are [L x L]; `heads` is [n x L x L].

/// -sum a ln a over the whole matrix (0 ln 0 = 0). With per_row, the mean of
/// the row entropies instead. Throws NumericalError on negative entries.
template <typename T>
double entropy(const Tensor<T>& a, bool per_row = false);

/// Frobenius norm.
template <typename T>
double concentration(const Tensor<T>& a);

/// Mean over causal positions of the population standard deviation across
/// heads. Throws ShapeError for fewer than two heads.
template <typename T>
double head_diversity(const Tensor<T>& heads);

/// Mean attention paid to the first token.
template <typename T>
double sink(const Tensor<T>& a);

/// Mean of the N-th subdiagonal. Throws ShapeError when L <= N.
template <typename T>
double local_focus(const Tensor<T>& a, std::size_t n);

inline constexpr std::size_t kLocalFocusMax = 3;

struct Indicators {
  std::optional<double> entropy;  ///< empty when undefined (negative weights)
  double conc = 0;
  std::optional<double> head_div;  ///< empty for single-head layers
  double sink = 0;
  std::array<std::optional<double>, kLocalFocusMax + 1> loc_foc{};  ///< empty when L <= N
};

struct HeadRecord {
  std::size_t layer = 0, head = 0;
  Indicators values;  ///< head_div is the layer's value
};

struct LayerRecord {
  std::size_t layer = 0;
  Indicators raw;         ///< averages over heads
  Indicators normalized;  ///< plot scaling, see normalize_for_plot
};

struct IndicatorReport {
  std::size_t seq_len = 0;
  std::size_t sequences = 0;  ///< batch entries averaged over
  bool per_row_entropy = false;
  std::vector<HeadRecord> heads;  ///< layer asc, head asc
  std::vector<LayerRecord> layers;
};

struct IndicatorOptions {
  bool per_row_entropy = false;
};

/// Per-layer scaling used for plotting: min-max over layers for entropy,
/// conc and head_div (0 when all layers agree); loc_foc doubled; sink as is.
std::vector<Indicators> normalize_for_plot(const std::vector<Indicators>& layers);

/// Indicators of one captured forward over `sequences` batch entries, each
/// layer's attention being [sequences*n_heads x L x L]. Approximate layers
/// in split mode carry row sums of 3 and are scaled by 1/3 first.
template <typename T>
IndicatorReport indicator_report(const ForwardCapture<T>& capture, const ModelConfig& cfg,
                                 std::size_t sequences, const IndicatorOptions& opt = {});

inline constexpr std::array<double, 5> kPrelogitQuantiles = {0.01, 0.25, 0.50, 0.75, 0.99};

struct PrelogitLayerStats {
  std::size_t layer = 0;
  std::size_t count = 0;
  double min = 0, max = 0;
  std::array<double, 5> quantiles{};  ///< at kPrelogitQuantiles, linear interpolation
  double max_abs = 0;
};

/// Statistics over the causal support (column <= row) of each layer's
/// prelogits. Layers without prelogits are skipped. Throws ShapeError when
/// no layer has any.
template <typename T>
std::vector<PrelogitLayerStats> prelogit_stats(const ForwardCapture<T>& capture);

}  // namespace datn
