#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppaml/gbt.hpp"
#include "ppaml/matrix.hpp"

namespace ppaml::quant {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 16;
inline constexpr int kDefaultBits = 6;
inline constexpr int kDefaultAccumulatorBits = 24;

/// Uniform affine quantizer of one feature. scale == 0 marks a constant
/// feature; every value then maps to level 0.
struct FeatureRange {
    double min = 0.0;
    double max = 0.0;
    double scale = 0.0;
    friend bool operator==(const FeatureRange&, const FeatureRange&) = default;
};

struct QuantParams {
    int n_bits = kDefaultBits;
    std::vector<FeatureRange> features;

    std::int64_t max_level() const noexcept { return (std::int64_t{1} << n_bits) - 1; }
    void validate() const;
    friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

void check_bits(int n_bits);

/// Per-feature min/max over the calibration rows.
QuantParams calibrate(const FeatureMatrix& rows, int n_bits);

/// q = clamp(round_half_even((x - min) / scale), 0, 2^n - 1).
std::vector<std::int64_t> quantize_row(std::span<const double> row, const QuantParams& params);
QuantMatrix quantize_rows(const FeatureMatrix& rows, const QuantParams& params);
/// Representative value of a level: min + q * scale.
double level_value(const FeatureRange& range, std::int64_t q) noexcept;

struct QNode {
    std::int32_t feature = -1;
    std::int64_t threshold = 0; ///< rows with q <= threshold go left; in [-1, 2^n - 1]
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int64_t leaf = 0;

    bool is_leaf() const noexcept { return feature < 0; }
    friend bool operator==(const QNode&, const QNode&) = default;
};

struct QTree {
    std::vector<QNode> nodes;
    std::size_t depth() const;
    std::size_t route(std::span<const std::int64_t> qrow) const;
    friend bool operator==(const QTree&, const QTree&) = default;
};

/// Integer-only ensemble. The integer score is base + sum of reached leaves;
/// margin = leaf_scale * score + margin_offset.
struct QuantizedEnsemble {
    QuantParams params;
    std::size_t arity = 0;
    std::vector<QTree> trees;
    std::int64_t base = 0;
    double leaf_scale = 0.0;
    double leaf_zero_point = 0.0;
    double margin_offset = 0.0;
    int accumulator_bits = 0; ///< signed width that holds every reachable score
    std::vector<std::string> feature_names;

    int n_bits() const noexcept { return params.n_bits; }
    /// Largest |leaf| or |base| value.
    std::int64_t max_abs_term() const noexcept { return (std::int64_t{1} << (params.n_bits - 1)) - 1; }
    double dequantize(std::int64_t score) const noexcept { return leaf_scale * static_cast<double>(score) + margin_offset; }
    void validate() const;
    friend bool operator==(const QuantizedEnsemble&, const QuantizedEnsemble&) = default;
};

/// Signed width needed for integers in [-bound, bound].
int signed_width(std::int64_t bound) noexcept;

/// Lowers `e` to integers. Leaves map affinely onto the signed n_bits range
/// (-(2^(n-1) - 1) .. 2^(n-1) - 1) around the midpoint of the leaf range.
/// Throws AccumulatorOverflow if the score cannot fit max_accumulator_bits.
QuantizedEnsemble quantize_ensemble(const gbt::Ensemble& e, const QuantParams& params,
                                    int max_accumulator_bits = kDefaultAccumulatorBits);

struct QuantPrediction {
    std::int64_t score = 0;
    double probability = 0.0;
    bool label = false;
};

/// Range-checks the input, then routes and sums in integers only.
std::int64_t quantized_score(const QuantizedEnsemble& qe, std::span<const std::int64_t> qrow);
QuantPrediction predict_quantized(const QuantizedEnsemble& qe, std::span<const std::int64_t> qrow,
                                  double threshold = 0.5);
/// Probability and label from an integer score, as predict_quantized applies them.
QuantPrediction finish_score(const QuantizedEnsemble& qe, std::int64_t score, double threshold = 0.5);

/// A float model together with its integer lowering.
struct QuantizedModel {
    gbt::Ensemble source;
    QuantizedEnsemble quantized;
};

/// The gbt JSON document plus a "quantization" section.
nlohmann::json to_json(const QuantizedModel& m);
QuantizedModel quantized_model_from_json(const nlohmann::json& j);
std::string serialize(const QuantizedModel& m);
QuantizedModel deserialize_quantized(const std::string& text);

nlohmann::json to_json(const QuantParams& p);
QuantParams quant_params_from_json(const nlohmann::json& j);

} // namespace ppaml::quant
