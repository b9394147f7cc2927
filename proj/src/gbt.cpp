#include "ppaml/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ppaml/rng.hpp"

namespace ppaml::gbt {

using nlohmann::json;

void TrainConfig::validate() const {
    if (n_estimators < 1) fail(Errc::InvalidConfig, "n_estimators must be at least 1");
    if (max_depth < 1) fail(Errc::InvalidConfig, "max_depth must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail(Errc::InvalidConfig, "learning_rate must be positive");
    if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0)) fail(Errc::InvalidConfig, "colsample_bytree must be in (0, 1]");
    if (!(l2_lambda >= 0.0)) fail(Errc::InvalidConfig, "l2_lambda must be non-negative");
    if (!(min_child_weight >= 0.0)) fail(Errc::InvalidConfig, "min_child_weight must be non-negative");
}

std::size_t Tree::depth() const {
    if (nodes.empty()) return 0;
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t deepest = 0;
    // Children always follow their parent in `nodes`.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].is_leaf()) continue;
        d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
        d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        deepest = std::max(deepest, d[i] + 1);
    }
    return deepest;
}

std::size_t Tree::route(std::span<const double> row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const Node& n = nodes[i];
        i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return i;
}

void Ensemble::validate() const {
    for (std::size_t t = 0; t < trees.size(); ++t) {
        const auto& nodes = trees[t].nodes;
        const std::string where = "tree " + std::to_string(t);
        if (nodes.empty()) fail(Errc::InvalidModel, where + " has no nodes");
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const Node& n = nodes[i];
            if (n.is_leaf()) {
                if (!std::isfinite(n.leaf)) fail(Errc::InvalidModel, where + " has a non-finite leaf");
                continue;
            }
            if (static_cast<std::size_t>(n.feature) >= arity) fail(Errc::InvalidModel, where + " splits on a feature past the arity");
            for (auto c : {n.left, n.right}) {
                if (c <= static_cast<std::int32_t>(i) || static_cast<std::size_t>(c) >= nodes.size()) {
                    fail(Errc::InvalidModel, where + " has a dangling or backward child");
                }
            }
            if (!std::isfinite(n.threshold)) fail(Errc::InvalidModel, where + " has a non-finite threshold");
        }
    }
    if (!std::isfinite(base_score)) fail(Errc::InvalidModel, "non-finite base score");
    if (!feature_names.empty() && feature_names.size() != arity) fail(Errc::InvalidModel, "feature_names size != arity");
}

double sigmoid(double m) noexcept {
    if (m >= 0) return 1.0 / (1.0 + std::exp(-m));
    const double e = std::exp(m);
    return e / (1.0 + e);
}

double log_loss(std::span<const double> margins, const std::vector<bool>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        // log(1 + exp(-s m)) with s = +-1, computed stably.
        const double z = labels[i] ? -margins[i] : margins[i];
        total += z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    return margins.empty() ? 0.0 : total / static_cast<double>(margins.size());
}

namespace {

struct Split {
    double gain = 0.0;
    std::size_t feature = 0;
    double threshold = 0.0;
    std::size_t left_count = 0;
    double gl = 0.0, hl = 0.0;
};

struct Segment {
    std::size_t node;
    std::size_t begin, end;
    double g, h;
    int depth;
};

class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& columns, const std::vector<std::vector<std::uint32_t>>& presorted,
                const TrainConfig& cfg, std::size_t n)
        : columns_(columns), presorted_(presorted), cfg_(cfg), n_(n), goes_left_(n), scratch_(n) {}

    // Grows one tree on gradients g, h over the given feature subset and adds
    // its leaf values to `margins`.
    Tree build(const std::vector<double>& g, const std::vector<double>& h, std::vector<std::size_t> subset,
               std::vector<double>& margins) {
        Tree tree;
        tree.feature_subset = std::move(subset);
        sorted_.clear();
        for (auto f : tree.feature_subset) sorted_.push_back(presorted_[f]);
        members_.resize(n_);
        std::iota(members_.begin(), members_.end(), 0U);

        double G = 0, H = 0;
        for (std::size_t r = 0; r < n_; ++r) {
            G += g[r];
            H += h[r];
        }
        tree.nodes.emplace_back();
        std::vector<Segment> level{{0, 0, n_, G, H, 0}};
        while (!level.empty()) {
            std::vector<Segment> next;
            for (const auto& seg : level) {
                Split best;
                if (seg.depth < cfg_.max_depth) best = best_split(tree.feature_subset, seg, g, h);
                if (best.gain <= 0.0) {
                    make_leaf(tree.nodes[seg.node], seg, margins);
                    continue;
                }
                const auto left = static_cast<std::int32_t>(tree.nodes.size());
                tree.nodes[seg.node].feature = static_cast<std::int32_t>(best.feature);
                tree.nodes[seg.node].threshold = best.threshold;
                tree.nodes[seg.node].left = left;
                tree.nodes[seg.node].right = left + 1;
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                partition(seg, best);
                const std::size_t mid = seg.begin + best.left_count;
                next.push_back({static_cast<std::size_t>(left), seg.begin, mid, best.gl, best.hl, seg.depth + 1});
                next.push_back({static_cast<std::size_t>(left + 1), mid, seg.end, seg.g - best.gl, seg.h - best.hl,
                                seg.depth + 1});
            }
            level = std::move(next);
        }
        return tree;
    }

private:
    Split best_split(const std::vector<std::size_t>& subset, const Segment& seg, const std::vector<double>& g,
                     const std::vector<double>& h) const {
        Split best;
        const double lambda = cfg_.l2_lambda;
        const double mcw = cfg_.min_child_weight;
        if (seg.end - seg.begin < 2) return best;
        const double parent = seg.g * seg.g / (seg.h + lambda);
        for (std::size_t k = 0; k < subset.size(); ++k) {
            const auto& col = columns_[subset[k]];
            const auto& order = sorted_[k];
            double gl = 0, hl = 0;
            for (std::size_t i = seg.begin; i + 1 < seg.end; ++i) {
                const auto r = order[i];
                gl += g[r];
                hl += h[r];
                const double v = col[r];
                const double vn = col[order[i + 1]];
                if (!(v < vn)) continue;
                const double hr = seg.h - hl;
                if (hl < mcw || hr < mcw) continue;
                const double gr = seg.g - gl;
                const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if (gain > best.gain) {
                    double t = v + (vn - v) / 2;
                    if (!(t < vn)) t = v;
                    best = {gain, subset[k], t, i + 1 - seg.begin, gl, hl};
                }
            }
        }
        return best;
    }

    void partition(const Segment& seg, const Split& split) {
        const auto& col = columns_[split.feature];
        for (std::size_t i = seg.begin; i < seg.end; ++i) {
            const auto r = members_[i];
            goes_left_[r] = col[r] <= split.threshold;
        }
        auto stable = [&](std::vector<std::uint32_t>& arr) {
            std::size_t l = seg.begin, rcount = 0;
            for (std::size_t i = seg.begin; i < seg.end; ++i) {
                const auto r = arr[i];
                if (goes_left_[r]) arr[l++] = r;
                else scratch_[rcount++] = r;
            }
            std::copy_n(scratch_.begin(), rcount, arr.begin() + static_cast<std::ptrdiff_t>(l));
        };
        stable(members_);
        for (auto& arr : sorted_) stable(arr);
    }

    void make_leaf(Node& node, const Segment& seg, std::vector<double>& margins) const {
        node.leaf = -seg.g / (seg.h + cfg_.l2_lambda) * cfg_.learning_rate;
        for (std::size_t i = seg.begin; i < seg.end; ++i) margins[members_[i]] += node.leaf;
    }

    const std::vector<std::vector<double>>& columns_;
    const std::vector<std::vector<std::uint32_t>>& presorted_;
    const TrainConfig& cfg_;
    std::size_t n_;
    std::vector<std::vector<std::uint32_t>> sorted_;
    std::vector<std::uint32_t> members_;
    std::vector<char> goes_left_;
    std::vector<std::uint32_t> scratch_;
};

} // namespace

Ensemble train(const FeatureMatrix& rows, const std::vector<bool>& labels, const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = rows.rows();
    const std::size_t f = rows.cols();
    if (n == 0) fail(Errc::InvalidConfig, "no training rows");
    if (labels.size() != n) fail(Errc::ArityMismatch, "labels vs rows: " + std::to_string(labels.size()) + " != " + std::to_string(n));
    const std::size_t positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    if (positives == 0 || positives == n) fail(Errc::SingleClassData, "training labels contain one class");

    std::vector<std::vector<double>> columns(f, std::vector<double>(n));
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < f; ++c) {
            const double v = rows(r, c);
            if (!std::isfinite(v)) fail(Errc::InvalidConfig, "non-finite feature value");
            columns[c][r] = v;
        }
    }
    std::vector<std::vector<std::uint32_t>> presorted(f, std::vector<std::uint32_t>(n));
    for (std::size_t c = 0; c < f; ++c) {
        auto& order = presorted[c];
        std::iota(order.begin(), order.end(), 0U);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return columns[c][a] < columns[c][b]; });
    }

    Ensemble e;
    e.arity = f;
    const double prior = static_cast<double>(positives) / static_cast<double>(n);
    e.base_score = std::log(prior / (1.0 - prior));

    std::vector<double> margins(n, e.base_score), g(n), h(n);
    const std::size_t keep = f == 0 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.colsample_bytree * static_cast<double>(f))));
    Rng rng(cfg.seed);
    TreeBuilder builder(columns, presorted, cfg, n);
    std::vector<std::size_t> all(f);
    std::iota(all.begin(), all.end(), 0);
    for (int t = 0; t < cfg.n_estimators; ++t) {
        for (std::size_t r = 0; r < n; ++r) {
            const double p = sigmoid(margins[r]);
            g[r] = p - (labels[r] ? 1.0 : 0.0);
            h[r] = p * (1.0 - p);
        }
        std::vector<std::size_t> subset = all;
        if (keep < f) {
            rng.shuffle(std::span(subset));
            subset.resize(keep);
            std::sort(subset.begin(), subset.end());
        }
        e.trees.push_back(builder.build(g, h, std::move(subset), margins));
    }
    return e;
}

double predict_margin(const Ensemble& e, std::span<const double> row) {
    if (row.size() != e.arity) {
        fail(Errc::ArityMismatch, "row has " + std::to_string(row.size()) + " features, model expects " + std::to_string(e.arity));
    }
    double m = e.base_score;
    for (const auto& t : e.trees) m += t.nodes[t.route(row)].leaf;
    return m;
}

bool predict(const Ensemble& e, std::span<const double> row, double threshold) {
    return sigmoid(predict_margin(e, row)) >= threshold;
}

std::vector<double> predict_margins(const Ensemble& e, const FeatureMatrix& rows) {
    std::vector<double> out(rows.rows());
    for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = predict_margin(e, rows.row(r));
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const TrainConfig& cfg) {
    return {{"n_estimators", cfg.n_estimators},     {"max_depth", cfg.max_depth},
            {"learning_rate", cfg.learning_rate},   {"colsample_bytree", cfg.colsample_bytree},
            {"l2_lambda", cfg.l2_lambda},           {"min_child_weight", cfg.min_child_weight},
            {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.n_estimators = j.value("n_estimators", cfg.n_estimators);
    cfg.max_depth = j.value("max_depth", cfg.max_depth);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.colsample_bytree = j.value("colsample_bytree", cfg.colsample_bytree);
    cfg.l2_lambda = j.value("l2_lambda", cfg.l2_lambda);
    cfg.min_child_weight = j.value("min_child_weight", cfg.min_child_weight);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

json to_json(const Ensemble& e) {
    json trees = json::array();
    for (const auto& t : e.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) nodes.push_back({{"leaf", n.leaf}});
            else nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
        }
        trees.push_back({{"features", t.feature_subset}, {"nodes", std::move(nodes)}});
    }
    json j = {{"format", "ppaml-gbt"},
              {"version", kModelFormatVersion},
              {"arity", e.arity},
              {"base_score", e.base_score},
              {"trees", std::move(trees)}};
    if (!e.feature_names.empty()) j["feature_names"] = e.feature_names;
    return j;
}

Ensemble ensemble_from_json(const json& j) {
    try {
        if (j.at("format") != "ppaml-gbt") fail(Errc::InvalidModel, "not a ppaml-gbt model");
        if (j.at("version").get<int>() != kModelFormatVersion) {
            fail(Errc::VersionMismatch, "model format version " + j.at("version").dump());
        }
        Ensemble e;
        e.arity = j.at("arity").get<std::size_t>();
        e.base_score = j.at("base_score").get<double>();
        if (j.contains("feature_names")) e.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        for (const auto& jt : j.at("trees")) {
            Tree t;
            t.feature_subset = jt.at("features").get<std::vector<std::size_t>>();
            for (const auto& jn : jt.at("nodes")) {
                Node n;
                if (jn.contains("leaf")) {
                    n.leaf = jn.at("leaf").get<double>();
                } else {
                    n.feature = jn.at("feature").get<std::int32_t>();
                    n.threshold = jn.at("threshold").get<double>();
                    n.left = jn.at("left").get<std::int32_t>();
                    n.right = jn.at("right").get<std::int32_t>();
                    if (n.feature < 0) fail(Errc::InvalidModel, "negative feature index");
                }
                t.nodes.push_back(n);
            }
            e.trees.push_back(std::move(t));
        }
        e.validate();
        return e;
    } catch (const json::exception& ex) {
        fail(Errc::InvalidModel, ex.what());
    }
}

std::string serialize(const Ensemble& e) { return to_json(e).dump(1) + "\n"; }

Ensemble deserialize(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        fail(Errc::InvalidModel, ex.what());
    }
    return ensemble_from_json(j);
}

} // namespace ppaml::gbt
