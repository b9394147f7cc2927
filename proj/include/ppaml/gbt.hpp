#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppaml/error.hpp"
#include "ppaml/matrix.hpp"

namespace ppaml::gbt {

struct TrainConfig {
    int n_estimators = 10;
    int max_depth = 3;
    double learning_rate = 0.1;
    double colsample_bytree = 1.0;
    double l2_lambda = 1.0;
    double min_child_weight = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Node {
    std::int32_t feature = -1; ///< -1 marks a leaf
    double threshold = 0.0;    ///< rows with x <= threshold go left
    std::int32_t left = -1;
    std::int32_t right = -1;
    double leaf = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
    friend bool operator==(const Node&, const Node&) = default;
};

struct Tree {
    std::vector<Node> nodes; ///< root at index 0
    std::vector<std::size_t> feature_subset; ///< ascending; features this tree may split on

    std::size_t depth() const;
    /// Index of the leaf `row` reaches.
    std::size_t route(std::span<const double> row) const;
    friend bool operator==(const Tree&, const Tree&) = default;
};

struct Ensemble {
    std::vector<Tree> trees;
    double base_score = 0.0; ///< log-odds
    std::size_t arity = 0;
    std::vector<std::string> feature_names; ///< optional, for provenance of columns

    /// Structural checks: children exist, features < arity, no cycles.
    void validate() const;
    friend bool operator==(const Ensemble&, const Ensemble&) = default;
};

/// Second-order boosting with logistic loss and exact greedy splits.
Ensemble train(const FeatureMatrix& rows, const std::vector<bool>& labels, const TrainConfig& cfg);

double predict_margin(const Ensemble& e, std::span<const double> row);
bool predict(const Ensemble& e, std::span<const double> row, double threshold = 0.5);
std::vector<double> predict_margins(const Ensemble& e, const FeatureMatrix& rows);

double sigmoid(double margin) noexcept;
/// Mean logistic loss of margins against labels.
double log_loss(std::span<const double> margins, const std::vector<bool>& labels);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json to_json(const Ensemble& e);
Ensemble ensemble_from_json(const nlohmann::json& j);
std::string serialize(const Ensemble& e);
Ensemble deserialize(const std::string& text);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

} // namespace ppaml::gbt
