#include "ppaml/hpo.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <optional>

#include "ppaml/error.hpp"
#include "ppaml/metrics.hpp"
#include "ppaml/rng.hpp"

namespace ppaml::hpo {

namespace {

constexpr std::size_t kMinFoldRows = 10;

void check_range(const char* name, double lo, double hi, double min_lo, double max_hi) {
    if (!(lo <= hi) || lo < min_lo || hi > max_hi) {
        fail(Errc::InvalidConfig, std::string("search range for ") + name + " is invalid");
    }
}

double to_unit(const RealRange& r, double v) {
    if (r.hi == r.lo) return 0.0;
    if (r.log_scale) return (std::log(v) - std::log(r.lo)) / (std::log(r.hi) - std::log(r.lo));
    return (v - r.lo) / (r.hi - r.lo);
}

double from_unit(const RealRange& r, double u) {
    if (r.hi == r.lo) return r.lo;
    if (r.log_scale) return std::clamp(std::exp(std::log(r.lo) + u * (std::log(r.hi) - std::log(r.lo))), r.lo, r.hi);
    return std::clamp(r.lo + u * (r.hi - r.lo), r.lo, r.hi);
}

double to_unit(const IntRange& r, int v) { return r.hi == r.lo ? 0.0 : double(v - r.lo) / double(r.hi - r.lo); }

int from_unit(const IntRange& r, double u) {
    return std::clamp(r.lo + static_cast<int>(std::lround(u * (r.hi - r.lo))), r.lo, r.hi);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

void SearchSpace::validate() const {
    check_range("n_estimators", n_estimators.lo, n_estimators.hi, 1, 1e6);
    check_range("max_depth", max_depth.lo, max_depth.hi, 1, 64);
    check_range("learning_rate", learning_rate.lo, learning_rate.hi, 1e-12, 1.0);
    check_range("colsample_bytree", colsample_bytree.lo, colsample_bytree.hi, 1e-12, 1.0);
}

bool SearchSpace::is_point() const noexcept {
    return n_estimators.lo == n_estimators.hi && max_depth.lo == max_depth.hi &&
           learning_rate.lo == learning_rate.hi && colsample_bytree.lo == colsample_bytree.hi;
}

gbt::TrainConfig Params::train_config(std::uint64_t seed) const {
    gbt::TrainConfig cfg;
    cfg.n_estimators = n_estimators;
    cfg.max_depth = max_depth;
    cfg.learning_rate = learning_rate;
    cfg.colsample_bytree = colsample_bytree;
    cfg.seed = seed;
    return cfg;
}

Point encode(const SearchSpace& s, const Params& p) {
    return {to_unit(s.n_estimators, p.n_estimators), to_unit(s.max_depth, p.max_depth),
            to_unit(s.learning_rate, p.learning_rate), to_unit(s.colsample_bytree, p.colsample_bytree)};
}

Params decode(const SearchSpace& s, const Point& u) {
    Point c;
    for (std::size_t d = 0; d < c.size(); ++d) c[d] = std::clamp(u[d], 0.0, 1.0);
    return {from_unit(s.n_estimators, c[0]), from_unit(s.max_depth, c[1]), from_unit(s.learning_rate, c[2]),
            from_unit(s.colsample_bytree, c[3])};
}

bool contains(const SearchSpace& s, const Params& p) noexcept {
    return p.n_estimators >= s.n_estimators.lo && p.n_estimators <= s.n_estimators.hi &&
           p.max_depth >= s.max_depth.lo && p.max_depth <= s.max_depth.hi &&
           p.learning_rate >= s.learning_rate.lo && p.learning_rate <= s.learning_rate.hi &&
           p.colsample_bytree >= s.colsample_bytree.lo && p.colsample_bytree <= s.colsample_bytree.hi;
}

double objective_score(Objective objective, const std::vector<bool>& truth, const std::vector<bool>& predicted) {
    const auto c = confusion(truth, predicted);
    return objective == Objective::Accuracy ? c.accuracy() : c.f1();
}

// ---------------------------------------------------------------------------
// Folds

namespace {

bool has_both(const std::vector<bool>& y, const std::vector<std::size_t>& idx) {
    bool pos = false, neg = false;
    for (auto i : idx) (y[i] ? pos : neg) = true;
    return pos && neg;
}

std::vector<Fold> folds_from_blocks(std::size_t n, const std::vector<std::size_t>& bounds, bool holdout) {
    std::vector<Fold> folds;
    const std::size_t blocks = bounds.size() - 1;
    for (std::size_t b = holdout ? blocks - 1 : 0; b < blocks; ++b) {
        Fold f;
        for (std::size_t i = 0; i < n; ++i) (i >= bounds[b] && i < bounds[b + 1] ? f.valid : f.train).push_back(i);
        folds.push_back(std::move(f));
    }
    return folds;
}

bool feasible(const std::vector<bool>& y, const std::vector<Fold>& folds) {
    return std::all_of(folds.begin(), folds.end(),
                       [&](const Fold& f) { return has_both(y, f.train) && has_both(y, f.valid); });
}

} // namespace

std::vector<Fold> make_folds(const std::vector<bool>& y, const CvConfig& cfg) {
    const std::size_t n = y.size();
    if (cfg.k == 0) fail(Errc::InvalidConfig, "k must be positive");
    if (n < cfg.k * kMinFoldRows) {
        fail(Errc::InfeasibleFolds, std::to_string(n) + " rows cannot fill " + std::to_string(cfg.k) + " folds of " +
                                        std::to_string(kMinFoldRows));
    }
    const bool holdout = cfg.k == 1;
    // k == 1 splits into thirds and keeps only the last as validation.
    const std::size_t blocks = holdout ? 3 : cfg.k;
    Rng rng(cfg.seed ^ 0x666f6c6473ULL);

    if (cfg.scheme == FoldScheme::Stratified) {
        for (int attempt = 0; attempt <= cfg.max_resamples; ++attempt) {
            std::vector<std::size_t> pos, neg;
            for (std::size_t i = 0; i < n; ++i) (y[i] ? pos : neg).push_back(i);
            rng.shuffle(std::span(pos));
            rng.shuffle(std::span(neg));
            std::vector<std::vector<std::size_t>> assigned(blocks);
            std::size_t next = 0;
            for (auto* cls : {&pos, &neg}) {
                for (auto i : *cls) assigned[next++ % blocks].push_back(i);
            }
            std::vector<Fold> folds;
            for (std::size_t b = holdout ? blocks - 1 : 0; b < blocks; ++b) {
                Fold f;
                f.valid = assigned[b];
                for (std::size_t o = 0; o < blocks; ++o) {
                    if (o != b) f.train.insert(f.train.end(), assigned[o].begin(), assigned[o].end());
                }
                std::sort(f.valid.begin(), f.valid.end());
                std::sort(f.train.begin(), f.train.end());
                folds.push_back(std::move(f));
            }
            if (feasible(y, folds)) return folds;
        }
        fail(Errc::InfeasibleFolds, "stratified folds lack a class");
    }

    std::vector<std::size_t> bounds(blocks + 1);
    for (std::size_t b = 0; b <= blocks; ++b) bounds[b] = b * n / blocks;
    auto folds = folds_from_blocks(n, bounds, holdout);
    if (feasible(y, folds)) return folds;
    const auto jitter = static_cast<std::int64_t>(n / (4 * blocks));
    for (int attempt = 0; attempt < cfg.max_resamples; ++attempt) {
        std::vector<std::size_t> moved = bounds;
        bool ok = true;
        for (std::size_t b = 1; b < blocks; ++b) {
            const auto shifted = static_cast<std::int64_t>(bounds[b]) + rng.between(-jitter, jitter);
            moved[b] = static_cast<std::size_t>(std::max<std::int64_t>(shifted, 0));
            if (moved[b] < moved[b - 1] + kMinFoldRows) ok = false;
        }
        if (!ok || moved[blocks] < moved[blocks - 1] + kMinFoldRows) continue;
        folds = folds_from_blocks(n, moved, holdout);
        if (feasible(y, folds)) return folds;
    }
    fail(Errc::InfeasibleFolds, "no temporal fold layout has both classes on every side");
}

TrialRecord run_cv(const FeatureMatrix& x, const std::vector<bool>& y, const Params& params, const CvConfig& cfg) {
    if (x.rows() != y.size()) fail(Errc::LengthMismatch, "feature rows and labels differ in length");
    const auto start = std::chrono::steady_clock::now();
    const auto folds = make_folds(y, cfg);
    TrialRecord rec;
    rec.params = params;
    const auto train_cfg = params.train_config(cfg.seed);
    for (const auto& fold : folds) {
        const auto tx = x.select_rows(fold.train), vx = x.select_rows(fold.valid);
        std::vector<bool> ty, vy;
        for (auto i : fold.train) ty.push_back(y[i]);
        for (auto i : fold.valid) vy.push_back(y[i]);
        const auto model = gbt::train(tx, ty, train_cfg);
        std::vector<bool> pred;
        for (std::size_t r = 0; r < vx.rows(); ++r) pred.push_back(gbt::predict(model, vx.row(r), cfg.threshold));
        rec.fold_scores.push_back(objective_score(cfg.objective, vy, pred));
    }
    rec.mean = std::accumulate(rec.fold_scores.begin(), rec.fold_scores.end(), 0.0) /
               static_cast<double>(rec.fold_scores.size());
    rec.wall_time = seconds_since(start);
    return rec;
}

// ---------------------------------------------------------------------------
// Surrogate

double matern52(const Point& a, const Point& b, double length) noexcept {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    const double r = std::sqrt(5.0 * d2) / length;
    return (1.0 + r + r * r / 3.0) * std::exp(-r);
}

double expected_improvement(double mean, double sd, double best, double xi) noexcept {
    const double gain = mean - best - xi;
    if (sd <= 1e-12) return std::max(gain, 0.0);
    const double z = gain / sd;
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    return gain * cdf + sd * pdf;
}

void GaussianProcess::fit(const std::vector<Point>& x, const std::vector<double>& y) {
    if (x.empty() || x.size() != y.size()) fail(Errc::InvalidConfig, "gaussian process needs matching, non-empty data");
    const auto n = static_cast<Eigen::Index>(x.size());
    x_ = x;
    mean_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean_) * (v - mean_);
    var /= static_cast<double>(y.size());
    scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = (y[static_cast<std::size_t>(i)] - mean_) / scale_;

    double best_lml = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd best_l;
    Eigen::VectorXd best_alpha;
    for (double length : {0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.5}) {
        for (double noise : {1e-6, 1e-4, 1e-2, 1e-1}) {
            Eigen::MatrixXd k(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j <= i; ++j) {
                    k(i, j) = k(j, i) = matern52(x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)], length);
                }
                k(i, i) += noise;
            }
            Eigen::LLT<Eigen::MatrixXd> llt(k);
            if (llt.info() != Eigen::Success) continue;
            const Eigen::VectorXd alpha = llt.solve(t);
            const Eigen::MatrixXd l = llt.matrixL();
            const double lml = -0.5 * t.dot(alpha) - l.diagonal().array().log().sum();
            if (lml > best_lml) {
                best_lml = lml;
                best_l = l;
                best_alpha = alpha;
                length_ = length;
                noise_ = noise;
            }
        }
    }
    if (!std::isfinite(best_lml)) fail(Errc::PipelineError, "gaussian process kernel matrix is not positive definite");
    alpha_.assign(best_alpha.data(), best_alpha.data() + n);
    chol_.resize(static_cast<std::size_t>(n * n));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(chol_.data(), n, n) = best_l;
}

std::pair<double, double> GaussianProcess::predict(const Point& p) const {
    const auto n = static_cast<Eigen::Index>(x_.size());
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks[i] = matern52(x_[static_cast<std::size_t>(i)], p, length_);
    const Eigen::Map<const Eigen::VectorXd> alpha(alpha_.data(), n);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> l(chol_.data(), n, n);
    const Eigen::VectorXd v = l.triangularView<Eigen::Lower>().solve(ks);
    const double mu = ks.dot(alpha);
    const double var = std::max(1.0 - v.squaredNorm(), 0.0);
    return {mean_ + scale_ * mu, scale_ * std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// Search loop

nlohmann::json to_json(const Params& p) {
    return {{"n_estimators", p.n_estimators},
            {"max_depth", p.max_depth},
            {"learning_rate", p.learning_rate},
            {"colsample_bytree", p.colsample_bytree}};
}

Params params_from_json(const nlohmann::json& j) {
    try {
        return {j.at("n_estimators").get<int>(), j.at("max_depth").get<int>(), j.at("learning_rate").get<double>(),
                j.at("colsample_bytree").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::InvalidConfig, std::string("params: ") + e.what());
    }
}

nlohmann::json to_json(const SearchSpace& s) {
    auto real = [](const RealRange& r) { return nlohmann::json{{"lo", r.lo}, {"hi", r.hi}, {"log", r.log_scale}}; };
    return {{"n_estimators", {s.n_estimators.lo, s.n_estimators.hi}},
            {"max_depth", {s.max_depth.lo, s.max_depth.hi}},
            {"learning_rate", real(s.learning_rate)},
            {"colsample_bytree", real(s.colsample_bytree)}};
}

SearchSpace search_space_from_json(const nlohmann::json& j) {
    try {
        auto real = [](const nlohmann::json& r) {
            return RealRange{r.at("lo").get<double>(), r.at("hi").get<double>(), r.value("log", false)};
        };
        SearchSpace s;
        s.n_estimators = {j.at("n_estimators").at(0).get<int>(), j.at("n_estimators").at(1).get<int>()};
        s.max_depth = {j.at("max_depth").at(0).get<int>(), j.at("max_depth").at(1).get<int>()};
        s.learning_rate = real(j.at("learning_rate"));
        s.colsample_bytree = real(j.at("colsample_bytree"));
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::InvalidConfig, std::string("search space: ") + e.what());
    }
}

nlohmann::json to_json(const TrialRecord& r) {
    return {{"trial_index", r.trial_index},
            {"params", to_json(r.params)},
            {"fold_scores", r.fold_scores},
            {"mean", r.mean},
            {"wall_time", r.wall_time}};
}

TrialRecord trial_from_json(const nlohmann::json& j) {
    try {
        TrialRecord r;
        r.trial_index = j.at("trial_index").get<std::size_t>();
        r.params = params_from_json(j.at("params"));
        r.fold_scores = j.at("fold_scores").get<std::vector<double>>();
        r.mean = j.at("mean").get<double>();
        r.wall_time = j.value("wall_time", 0.0);
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ResumeMismatch, std::string("trial record: ") + e.what());
    }
}

namespace {

nlohmann::json history_header(const SearchSpace& space, const OptimizeConfig& cfg) {
    return {{"type", "header"}, {"seed", cfg.seed}, {"space", to_json(space)}, {"initial_random", cfg.initial_random},
            {"candidates", cfg.candidates}};
}

std::vector<TrialRecord> load_history(const SearchSpace& space, const OptimizeConfig& cfg) {
    std::ifstream in(cfg.history_path);
    if (!in) return {};
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) return {};
    nlohmann::json header = nlohmann::json::parse(lines[0], nullptr, false);
    if (header.is_discarded() || header != history_header(space, cfg)) {
        fail(Errc::ResumeMismatch, cfg.history_path + " was written for a different search");
    }
    std::vector<TrialRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto j = nlohmann::json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) {
            // A torn final line from an interrupted run is dropped.
            if (i + 1 == lines.size()) break;
            fail(Errc::ResumeMismatch, cfg.history_path + ": unreadable line " + std::to_string(i + 1));
        }
        auto rec = trial_from_json(j);
        if (rec.trial_index != out.size()) fail(Errc::ResumeMismatch, cfg.history_path + ": trial indices out of order");
        out.push_back(std::move(rec));
    }
    return out;
}

class Suggester {
public:
    Suggester(const SearchSpace& space, const OptimizeConfig& cfg) : space_(space), cfg_(cfg), rng_(cfg.seed) {}

    Params random() {
        Point u;
        for (auto& v : u) v = rng_.uniform();
        return decode(space_, u);
    }

    Params guided(const std::vector<TrialRecord>& history) {
        std::vector<Point> xs;
        std::vector<double> ys;
        std::size_t best = 0;
        for (std::size_t i = 0; i < history.size(); ++i) {
            xs.push_back(encode(space_, history[i].params));
            ys.push_back(history[i].mean);
            if (history[i].mean > history[best].mean) best = i;
        }
        GaussianProcess gp;
        gp.fit(xs, ys);
        const double incumbent = history[best].mean;
        const Point centre = xs[best];

        std::optional<Params> choice;
        double best_ei = -1.0;
        for (std::size_t c = 0; c < cfg_.candidates; ++c) {
            Point u;
            // A quarter of the candidates sample locally around the incumbent.
            if (c % 4 == 0) {
                for (std::size_t d = 0; d < u.size(); ++d) u[d] = centre[d] + 0.08 * rng_.normal();
            } else {
                for (auto& v : u) v = rng_.uniform();
            }
            const Params p = decode(space_, u);
            if (std::any_of(history.begin(), history.end(), [&](const TrialRecord& r) { return r.params == p; })) {
                continue;
            }
            const auto [mu, sd] = gp.predict(encode(space_, p));
            const double ei = expected_improvement(mu, sd, incumbent);
            if (ei > best_ei) {
                best_ei = ei;
                choice = p;
            }
        }
        return choice ? *choice : random();
    }

private:
    SearchSpace space_;
    OptimizeConfig cfg_;
    Rng rng_;
};

TrialRecord evaluate_trial(const Evaluator& evaluate, const Params& p, std::size_t index) {
    const auto start = std::chrono::steady_clock::now();
    TrialRecord r;
    r.trial_index = index;
    r.params = p;
    r.fold_scores = evaluate(p, index);
    if (r.fold_scores.empty()) fail(Errc::PipelineError, "evaluator returned no fold scores");
    r.mean = std::accumulate(r.fold_scores.begin(), r.fold_scores.end(), 0.0) / static_cast<double>(r.fold_scores.size());
    r.wall_time = seconds_since(start);
    return r;
}

} // namespace

OptimizeResult optimize(const SearchSpace& space, const Evaluator& evaluate, const OptimizeConfig& cfg) {
    space.validate();
    if (cfg.iterations == 0) fail(Errc::InvalidConfig, "iterations must be positive");
    const std::size_t total = space.is_point() ? 1 : cfg.iterations;
    const std::size_t n_random = std::min(std::max<std::size_t>(cfg.initial_random, 1), total);

    std::vector<TrialRecord> recorded;
    if (cfg.resume && !cfg.history_path.empty()) recorded = load_history(space, cfg);
    if (recorded.size() > total) recorded.resize(total);

    std::ofstream log;
    if (!cfg.history_path.empty()) {
        log.open(cfg.history_path, std::ios::trunc);
        if (!log) fail(Errc::InvalidConfig, "cannot write " + cfg.history_path);
        log << history_header(space, cfg).dump() << '\n';
        for (const auto& r : recorded) log << to_json(r).dump() << '\n';
        log.flush();
    }
    auto append = [&](const TrialRecord& r) {
        if (log.is_open()) {
            log << to_json(r).dump() << '\n';
            log.flush();
        }
    };

    Suggester suggest(space, cfg);
    std::vector<TrialRecord> history;
    auto replay_or_evaluate = [&](const Params& p, std::size_t i) -> std::optional<TrialRecord> {
        if (i < recorded.size()) {
            if (!(recorded[i].params == p)) {
                fail(Errc::ResumeMismatch, "trial " + std::to_string(i) + " differs from the recorded suggestion");
            }
            return recorded[i];
        }
        return std::nullopt;
    };

    // Random phase: suggestions do not depend on scores, so the batch can be
    // evaluated concurrently and recorded in index order.
    std::vector<Params> batch;
    for (std::size_t i = 0; i < n_random; ++i) {
        batch.push_back(space.is_point() ? decode(space, Point{}) : suggest.random());
    }
    std::vector<std::optional<TrialRecord>> done(n_random);
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < n_random; ++i) {
        done[i] = replay_or_evaluate(batch[i], i);
        if (!done[i]) pending.push_back(i);
    }
    const std::size_t threads = std::max<std::size_t>(cfg.threads, 1);
    for (std::size_t at = 0; at < pending.size(); at += threads) {
        std::vector<std::future<TrialRecord>> futures;
        for (std::size_t j = at; j < std::min(at + threads, pending.size()); ++j) {
            const auto i = pending[j];
            futures.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred,
                                         [&, i] { return evaluate_trial(evaluate, batch[i], i); }));
        }
        for (std::size_t j = 0; j < futures.size(); ++j) done[pending[at + j]] = futures[j].get();
    }
    for (std::size_t i = 0; i < n_random; ++i) {
        if (i >= recorded.size()) append(*done[i]);
        history.push_back(std::move(*done[i]));
    }

    for (std::size_t i = n_random; i < total; ++i) {
        const Params p = suggest.guided(history);
        auto rec = replay_or_evaluate(p, i);
        if (!rec) {
            rec = evaluate_trial(evaluate, p, i);
            append(*rec);
        }
        history.push_back(std::move(*rec));
    }

    OptimizeResult out;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (i == 0 || history[i].mean > out.best_score) {
            out.best_score = history[i].mean;
            out.best_index = i;
        }
    }
    out.best = history[out.best_index].params;
    out.history = std::move(history);
    return out;
}

OptimizeResult optimize(const FeatureMatrix& x, const std::vector<bool>& y, const SearchSpace& space,
                        const CvConfig& cv, const OptimizeConfig& cfg) {
    make_folds(y, cv); // surface InfeasibleFolds before any trial runs
    return optimize(
        space, [&](const Params& p, std::size_t) { return run_cv(x, y, p, cv).fold_scores; }, cfg);
}

} // namespace ppaml::hpo
