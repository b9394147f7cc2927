#include "ppaml/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace ppaml::quant {

using nlohmann::json;

void check_bits(int n_bits) {
    if (n_bits < kMinBits || n_bits > kMaxBits) {
        fail(Errc::InvalidConfig, "n_bits " + std::to_string(n_bits) + " outside [" + std::to_string(kMinBits) + ", " +
                                      std::to_string(kMaxBits) + "]");
    }
}

void QuantParams::validate() const {
    check_bits(n_bits);
    for (const auto& f : features) {
        if (!std::isfinite(f.min) || !std::isfinite(f.max) || f.max < f.min || f.scale < 0 || !std::isfinite(f.scale)) {
            fail(Errc::InvalidModel, "bad feature range");
        }
        if ((f.scale == 0) != (f.max == f.min)) fail(Errc::InvalidModel, "scale must be 0 exactly for constant features");
    }
}

QuantParams calibrate(const FeatureMatrix& rows, int n_bits) {
    check_bits(n_bits);
    if (rows.rows() == 0) fail(Errc::InvalidConfig, "no calibration rows");
    QuantParams p;
    p.n_bits = n_bits;
    p.features.resize(rows.cols());
    for (std::size_t c = 0; c < rows.cols(); ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t r = 0; r < rows.rows(); ++r) {
            lo = std::min(lo, rows(r, c));
            hi = std::max(hi, rows(r, c));
        }
        p.features[c] = {lo, hi, hi > lo ? (hi - lo) / static_cast<double>(p.max_level()) : 0.0};
    }
    return p;
}

double level_value(const FeatureRange& range, std::int64_t q) noexcept {
    return range.min + static_cast<double>(q) * range.scale;
}

std::vector<std::int64_t> quantize_row(std::span<const double> row, const QuantParams& params) {
    if (row.size() != params.features.size()) {
        fail(Errc::ArityMismatch, "row has " + std::to_string(row.size()) + " features, quantizer expects " +
                                      std::to_string(params.features.size()));
    }
    const double top = static_cast<double>(params.max_level());
    std::vector<std::int64_t> out(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
        const auto& f = params.features[c];
        if (f.scale == 0.0 || std::isnan(row[c])) continue;
        // nearbyint honours the default round-half-to-even mode.
        const double q = std::nearbyint((row[c] - f.min) / f.scale);
        out[c] = static_cast<std::int64_t>(std::clamp(q, 0.0, top));
    }
    return out;
}

QuantMatrix quantize_rows(const FeatureMatrix& rows, const QuantParams& params) {
    QuantMatrix out(rows.rows(), rows.cols());
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        const auto q = quantize_row(rows.row(r), params);
        std::copy(q.begin(), q.end(), out.row(r).begin());
    }
    return out;
}

std::size_t QTree::depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].is_leaf()) continue;
        d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
        d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        deepest = std::max(deepest, d[i] + 1);
    }
    return deepest;
}

std::size_t QTree::route(std::span<const std::int64_t> qrow) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const QNode& n = nodes[i];
        i = static_cast<std::size_t>(qrow[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return i;
}

int signed_width(std::int64_t bound) noexcept {
    return static_cast<int>(std::bit_width(static_cast<std::uint64_t>(bound))) + 1;
}

namespace {

// Largest level q in [-1, 2^n - 1] whose representative satisfies x <= t.
std::int64_t quantize_threshold(const FeatureRange& f, double t, std::int64_t top) {
    if (f.scale == 0.0) return f.min <= t ? 0 : -1;
    const double raw = std::floor((t - f.min) / f.scale);
    std::int64_t q = static_cast<std::int64_t>(std::clamp(raw, -1.0, static_cast<double>(top)));
    // Settle floating-point edge cases against the representatives themselves.
    while (q < top && level_value(f, q + 1) <= t) ++q;
    while (q >= 0 && level_value(f, q) > t) --q;
    return q;
}

int ceil_log2(std::size_t n) { return n <= 1 ? 0 : static_cast<int>(std::bit_width(n - 1)); }

} // namespace

void QuantizedEnsemble::validate() const {
    params.validate();
    if (params.features.size() != arity) fail(Errc::InvalidModel, "quantizer arity differs from model arity");
    const std::int64_t q = max_abs_term();
    if (std::abs(base) > q) fail(Errc::InvalidModel, "base outside the leaf range");
    for (const auto& t : trees) {
        if (t.nodes.empty()) fail(Errc::InvalidModel, "empty tree");
        for (std::size_t i = 0; i < t.nodes.size(); ++i) {
            const auto& n = t.nodes[i];
            if (n.is_leaf()) {
                if (std::abs(n.leaf) > q) fail(Errc::InvalidModel, "leaf outside n_bits");
                continue;
            }
            if (static_cast<std::size_t>(n.feature) >= arity) fail(Errc::InvalidModel, "feature past arity");
            if (n.threshold < -1 || n.threshold > params.max_level()) fail(Errc::InvalidModel, "threshold outside level range");
            for (auto c : {n.left, n.right}) {
                if (c <= static_cast<std::int32_t>(i) || static_cast<std::size_t>(c) >= t.nodes.size()) {
                    fail(Errc::InvalidModel, "dangling or backward child");
                }
            }
        }
    }
    const auto bound = static_cast<std::int64_t>(trees.size() + 1) * q;
    if (accumulator_bits < signed_width(bound)) fail(Errc::InvalidModel, "accumulator too narrow for the model");
}

QuantizedEnsemble quantize_ensemble(const gbt::Ensemble& e, const QuantParams& params, int max_accumulator_bits) {
    params.validate();
    e.validate();
    if (params.features.size() != e.arity) {
        fail(Errc::ArityMismatch, "quantizer covers " + std::to_string(params.features.size()) + " features, model has " +
                                      std::to_string(e.arity));
    }
    QuantizedEnsemble qe;
    qe.params = params;
    qe.arity = e.arity;
    qe.feature_names = e.feature_names;
    const std::int64_t top = params.max_level();
    const std::int64_t q = qe.max_abs_term();

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& t : e.trees) {
        for (const auto& n : t.nodes) {
            if (!n.is_leaf()) continue;
            lo = std::min(lo, n.leaf);
            hi = std::max(hi, n.leaf);
        }
    }
    const std::size_t n_trees = e.trees.size();
    if (n_trees > 0 && hi > lo) {
        qe.leaf_zero_point = lo + (hi - lo) / 2;
        qe.leaf_scale = (hi - lo) / static_cast<double>(2 * q);
    } else {
        qe.leaf_zero_point = n_trees > 0 ? lo : 0.0;
        qe.leaf_scale = 0.0;
    }
    auto lower_leaf = [&](double v) -> std::int64_t {
        if (qe.leaf_scale == 0.0) return 0;
        const double x = std::nearbyint((v - qe.leaf_zero_point) / qe.leaf_scale);
        return static_cast<std::int64_t>(std::clamp(x, static_cast<double>(-q), static_cast<double>(q)));
    };

    for (const auto& t : e.trees) {
        QTree qt;
        for (const auto& n : t.nodes) {
            QNode m;
            if (n.is_leaf()) {
                m.leaf = lower_leaf(n.leaf);
            } else {
                m.feature = n.feature;
                m.left = n.left;
                m.right = n.right;
                m.threshold = quantize_threshold(params.features[static_cast<std::size_t>(n.feature)], n.threshold, top);
            }
            qt.nodes.push_back(m);
        }
        qe.trees.push_back(std::move(qt));
    }

    // The constant part of the margin goes into one more bounded integer term;
    // whatever it cannot express stays a float offset applied at dequantization.
    const double constant = e.base_score + static_cast<double>(n_trees) * qe.leaf_zero_point;
    if (qe.leaf_scale > 0.0) {
        qe.base = static_cast<std::int64_t>(std::clamp(std::nearbyint(constant / qe.leaf_scale), static_cast<double>(-q),
                                                       static_cast<double>(q)));
    }
    qe.margin_offset = constant - qe.leaf_scale * static_cast<double>(qe.base);

    const int rule = params.n_bits + ceil_log2(n_trees) + 1;
    qe.accumulator_bits = std::max(rule, signed_width(static_cast<std::int64_t>(n_trees + 1) * q));
    if (qe.accumulator_bits > max_accumulator_bits) {
        fail(Errc::AccumulatorOverflow, "ensemble needs a " + std::to_string(qe.accumulator_bits) +
                                            "-bit accumulator, limit is " + std::to_string(max_accumulator_bits));
    }
    return qe;
}

std::int64_t quantized_score(const QuantizedEnsemble& qe, std::span<const std::int64_t> qrow) {
    if (qrow.size() != qe.arity) {
        fail(Errc::ArityMismatch, "row has " + std::to_string(qrow.size()) + " levels, model expects " + std::to_string(qe.arity));
    }
    const std::int64_t top = qe.params.max_level();
    for (std::size_t c = 0; c < qrow.size(); ++c) {
        if (qrow[c] < 0 || qrow[c] > top) {
            fail(Errc::RangeViolation, "feature " + std::to_string(c) + " level " + std::to_string(qrow[c]) +
                                           " outside [0, " + std::to_string(top) + "]");
        }
    }
    std::int64_t score = qe.base;
    for (const auto& t : qe.trees) score += t.nodes[t.route(qrow)].leaf;
    return score;
}

QuantPrediction finish_score(const QuantizedEnsemble& qe, std::int64_t score, double threshold) {
    QuantPrediction p;
    p.score = score;
    p.probability = gbt::sigmoid(qe.dequantize(score));
    p.label = p.probability >= threshold;
    return p;
}

QuantPrediction predict_quantized(const QuantizedEnsemble& qe, std::span<const std::int64_t> qrow, double threshold) {
    return finish_score(qe, quantized_score(qe, qrow), threshold);
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const QuantParams& p) {
    json features = json::array();
    for (const auto& f : p.features) features.push_back({{"min", f.min}, {"max", f.max}, {"scale", f.scale}});
    return {{"n_bits", p.n_bits}, {"features", std::move(features)}};
}

QuantParams quant_params_from_json(const json& j) {
    QuantParams p;
    p.n_bits = j.at("n_bits").get<int>();
    for (const auto& f : j.at("features")) {
        p.features.push_back({f.at("min").get<double>(), f.at("max").get<double>(), f.at("scale").get<double>()});
    }
    return p;
}

json to_json(const QuantizedModel& m) {
    const auto& qe = m.quantized;
    json trees = json::array();
    for (const auto& t : qe.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) nodes.push_back({{"leaf", n.leaf}});
            else nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
        }
        trees.push_back({{"nodes", std::move(nodes)}});
    }
    json j = gbt::to_json(m.source);
    json q = to_json(qe.params);
    q["leaf_scale"] = qe.leaf_scale;
    q["leaf_zero_point"] = qe.leaf_zero_point;
    q["margin_offset"] = qe.margin_offset;
    q["base"] = qe.base;
    q["accumulator_bits"] = qe.accumulator_bits;
    q["trees"] = std::move(trees);
    j["quantization"] = std::move(q);
    return j;
}

QuantizedModel quantized_model_from_json(const json& j) {
    QuantizedModel m;
    m.source = gbt::ensemble_from_json(j);
    try {
        const auto& q = j.at("quantization");
        auto& qe = m.quantized;
        qe.params = quant_params_from_json(q);
        qe.arity = m.source.arity;
        qe.feature_names = m.source.feature_names;
        qe.leaf_scale = q.at("leaf_scale").get<double>();
        qe.leaf_zero_point = q.at("leaf_zero_point").get<double>();
        qe.margin_offset = q.at("margin_offset").get<double>();
        qe.base = q.at("base").get<std::int64_t>();
        qe.accumulator_bits = q.at("accumulator_bits").get<int>();
        for (const auto& jt : q.at("trees")) {
            QTree t;
            for (const auto& jn : jt.at("nodes")) {
                QNode n;
                if (jn.contains("leaf")) {
                    n.leaf = jn.at("leaf").get<std::int64_t>();
                } else {
                    n.feature = jn.at("feature").get<std::int32_t>();
                    n.threshold = jn.at("threshold").get<std::int64_t>();
                    n.left = jn.at("left").get<std::int32_t>();
                    n.right = jn.at("right").get<std::int32_t>();
                    if (n.feature < 0) fail(Errc::InvalidModel, "negative feature index");
                }
                t.nodes.push_back(n);
            }
            qe.trees.push_back(std::move(t));
        }
    } catch (const json::exception& ex) {
        fail(Errc::InvalidModel, ex.what());
    }
    m.quantized.validate();
    if (m.quantized.trees.size() != m.source.trees.size()) fail(Errc::InvalidModel, "tree count differs from source model");
    for (std::size_t t = 0; t < m.source.trees.size(); ++t) {
        const auto& a = m.source.trees[t].nodes;
        const auto& b = m.quantized.trees[t].nodes;
        bool same = a.size() == b.size();
        for (std::size_t i = 0; same && i < a.size(); ++i) {
            same = a[i].feature == b[i].feature && a[i].left == b[i].left && a[i].right == b[i].right;
        }
        if (!same) fail(Errc::InvalidModel, "tree " + std::to_string(t) + " topology differs from source model");
    }
    return m;
}

std::string serialize(const QuantizedModel& m) { return to_json(m).dump(1) + "\n"; }

QuantizedModel deserialize_quantized(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        fail(Errc::InvalidModel, ex.what());
    }
    return quantized_model_from_json(j);
}

} // namespace ppaml::quant
