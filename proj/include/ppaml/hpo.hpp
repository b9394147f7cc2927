#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppaml/gbt.hpp"
#include "ppaml/matrix.hpp"

namespace ppaml::hpo {

struct IntRange {
    int lo = 0, hi = 0;
    friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct RealRange {
    double lo = 0.0, hi = 0.0;
    bool log_scale = false;
    friend bool operator==(const RealRange&, const RealRange&) = default;
};

/// Box over the tuned booster settings. A dimension with lo == hi is fixed.
struct SearchSpace {
    IntRange n_estimators{5, 30};
    IntRange max_depth{2, 12};
    RealRange learning_rate{0.003, 0.1, true};
    RealRange colsample_bytree{0.5, 1.0, false};

    static constexpr std::size_t kDims = 4;
    void validate() const;
    bool is_point() const noexcept;
    friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

struct Params {
    int n_estimators = 10;
    int max_depth = 3;
    double learning_rate = 0.1;
    double colsample_bytree = 1.0;

    gbt::TrainConfig train_config(std::uint64_t seed) const;
    friend bool operator==(const Params&, const Params&) = default;
};

using Point = std::array<double, SearchSpace::kDims>;

/// Unit-cube coordinates of params (log scale where declared).
Point encode(const SearchSpace& space, const Params& p);
/// Inverse of encode with integer dimensions rounded; u is clamped to [0,1].
Params decode(const SearchSpace& space, const Point& u);
bool contains(const SearchSpace& space, const Params& p) noexcept;

enum class Objective { MinorityF1, Accuracy };
enum class FoldScheme { Temporal, Stratified };

double objective_score(Objective objective, const std::vector<bool>& truth, const std::vector<bool>& predicted);

struct CvConfig {
    std::size_t k = 3;
    Objective objective = Objective::MinorityF1;
    FoldScheme scheme = FoldScheme::Temporal;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    int max_resamples = 64;
};

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
};

/// Temporal folds are contiguous blocks of the row order; k == 1 holds out
/// the last third. If a fold lacks a class on either side, block boundaries
/// are jittered (seeded) and retried. Throws InfeasibleFolds.
std::vector<Fold> make_folds(const std::vector<bool>& labels, const CvConfig& cfg);

struct TrialRecord {
    std::size_t trial_index = 0;
    Params params;
    std::vector<double> fold_scores;
    double mean = 0.0;
    double wall_time = 0.0; ///< seconds

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// Rows must be in chronological order for temporal folds.
TrialRecord run_cv(const FeatureMatrix& x, const std::vector<bool>& y, const Params& params, const CvConfig& cfg);

/// Fold scores for one trial. Must be safe to call concurrently.
using Evaluator = std::function<std::vector<double>(const Params&, std::size_t trial_index)>;

struct OptimizeConfig {
    std::size_t iterations = 50;
    std::size_t initial_random = 10;
    std::size_t candidates = 1024;
    std::uint64_t seed = 0;
    std::size_t threads = 1;  ///< parallel evaluation of the random batch
    std::string history_path; ///< JSONL; empty disables persistence
    bool resume = false;
};

struct OptimizeResult {
    Params best;
    double best_score = 0.0;
    std::size_t best_index = 0;
    std::vector<TrialRecord> history;
};

/// Random exploration followed by expected improvement under a Matern-5/2
/// Gaussian process over unit-cube coordinates. A point space is evaluated
/// exactly once.
OptimizeResult optimize(const SearchSpace& space, const Evaluator& evaluate, const OptimizeConfig& cfg);
OptimizeResult optimize(const FeatureMatrix& x, const std::vector<bool>& y, const SearchSpace& space,
                        const CvConfig& cv, const OptimizeConfig& cfg);

/// Gaussian-process regression with a Matern-5/2 kernel. Hyperparameters
/// are chosen from a fixed grid by marginal likelihood; targets are
/// standardized internally.
class GaussianProcess {
public:
    void fit(const std::vector<Point>& x, const std::vector<double>& y);
    /// Posterior mean and standard deviation in target units.
    std::pair<double, double> predict(const Point& x) const;
    double length_scale() const noexcept { return length_; }

private:
    std::vector<Point> x_;
    std::vector<double> alpha_;
    std::vector<double> chol_; ///< lower factor, row-major n x n
    double length_ = 0.3, noise_ = 1e-6, mean_ = 0.0, scale_ = 1.0;
};

double matern52(const Point& a, const Point& b, double length) noexcept;
double expected_improvement(double mean, double sd, double best, double xi = 0.0) noexcept;

nlohmann::json to_json(const Params& p);
Params params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SearchSpace& s);
SearchSpace search_space_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrialRecord& r);
TrialRecord trial_from_json(const nlohmann::json& j);

} // namespace ppaml::hpo
