#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ppaml/hpo.hpp"
#include "ppaml/metrics.hpp"
#include "ppaml/rng.hpp"

using namespace ppaml;
using namespace ppaml::hpo;

namespace {

std::optional<Errc> code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

struct Labeled {
    FeatureMatrix x;
    std::vector<bool> y;
};

Labeled noisy_data(std::uint64_t seed, std::size_t n, double noise) {
    Rng rng(seed);
    Labeled d{FeatureMatrix(n, 3), {}};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < 3; ++c) d.x(r, c) = rng.uniform(-1, 1);
        d.y.push_back(d.x(r, 0) + 0.5 * d.x(r, 1) + noise * rng.normal() > 0.1);
    }
    return d;
}

// Planted objective: smooth bump with its unique maximum (1.0) at `opt`.
struct Planted {
    SearchSpace space;
    Params opt;
    double operator()(const Params& p) const {
        const auto u = encode(space, p), o = encode(space, opt);
        double d2 = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) d2 += (u[i] - o[i]) * (u[i] - o[i]);
        return std::exp(-2.0 * d2);
    }
};

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("SearchSpace: default box and unit-cube coding") {
    const SearchSpace s;
    CHECK(s.n_estimators == IntRange{5, 30});
    CHECK(s.max_depth == IntRange{2, 12});
    CHECK(s.learning_rate.lo == 0.003);
    CHECK(s.learning_rate.hi == 0.1);
    CHECK(s.learning_rate.log_scale);
    CHECK(s.colsample_bytree.lo == 0.5);
    CHECK(s.colsample_bytree.hi == 1.0);
    CHECK_NOTHROW(s.validate());
    CHECK_FALSE(s.is_point());

    const Params lo = decode(s, {0, 0, 0, 0}), hi = decode(s, {1, 1, 1, 1});
    CHECK(lo == Params{5, 2, 0.003, 0.5});
    CHECK(hi == Params{30, 12, 0.1, 1.0});
    // Log scale: the cube midpoint is the geometric mean.
    CHECK(decode(s, {0.5, 0.5, 0.5, 0.5}).learning_rate == doctest::Approx(std::sqrt(0.003 * 0.1)));

    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
        const Point u{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
        const Params p = decode(s, u);
        CHECK(contains(s, p));
        CHECK(decode(s, encode(s, p)) == p);
    }

    SearchSpace bad;
    bad.max_depth = {5, 4};
    CHECK(code_of([&] { bad.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("make_folds: contiguous blocks, holdout and infeasibility") {
    std::vector<bool> y(90);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0;
    CvConfig cv;
    const auto folds = make_folds(y, cv);
    REQUIRE(folds.size() == 3);
    for (std::size_t f = 0; f < 3; ++f) {
        CHECK(folds[f].valid.front() == f * 30);
        CHECK(folds[f].valid.back() == f * 30 + 29);
        CHECK(folds[f].train.size() == 60);
    }

    cv.k = 1;
    const auto hold = make_folds(y, cv);
    REQUIRE(hold.size() == 1);
    CHECK(hold[0].valid.front() == 60);
    CHECK(hold[0].train.size() == 60);

    cv.k = 3;
    CHECK(code_of([&] { make_folds(std::vector<bool>(29, true), cv); }) == Errc::InfeasibleFolds);
    std::vector<bool> one_class(300, false);
    one_class[0] = true;
    CHECK(code_of([&] { make_folds(one_class, cv); }) == Errc::InfeasibleFolds);

    // Positives only in the first block: jittered boundaries cannot help
    // unless a positive lands in every block, so this one is rejected too.
    std::vector<bool> early(300, false);
    for (std::size_t i = 0; i < 50; ++i) early[i] = i % 2 == 0;
    CHECK(code_of([&] { make_folds(early, cv); }) == Errc::InfeasibleFolds);

    // Positives clustered just past a boundary become feasible after jitter.
    std::vector<bool> edge(300, false);
    for (std::size_t i : {5u, 15u, 95u, 97u}) edge[i] = true;
    for (std::size_t i : {210u, 220u}) edge[i] = true;
    const auto j = make_folds(edge, cv);
    for (const auto& f : j) {
        bool pos = false;
        for (auto i : f.valid) pos = pos || edge[i];
        CHECK(pos);
    }

    cv.scheme = FoldScheme::Stratified;
    const auto strat = make_folds(y, cv);
    for (const auto& f : strat) {
        std::size_t pos = 0;
        for (auto i : f.valid) pos += y[i];
        CHECK(pos == 10);
        CHECK(f.valid.size() == 30);
    }
}

TEST_CASE("run_cv: holdout equals a single hand-scored evaluation") {
    const auto d = noisy_data(2, 300, 0.3);
    CvConfig cv;
    cv.k = 1;
    cv.seed = 4;
    const Params p{8, 3, 0.1, 1.0};
    const auto rec = run_cv(d.x, d.y, p, cv);
    REQUIRE(rec.fold_scores.size() == 1);

    const auto fold = make_folds(d.y, cv)[0];
    std::vector<bool> ty, vy;
    for (auto i : fold.train) ty.push_back(d.y[i]);
    const auto model = gbt::train(d.x.select_rows(fold.train), ty, p.train_config(4));
    std::size_t tp = 0, fp = 0, fn = 0;
    for (auto i : fold.valid) {
        const bool pred = gbt::predict(model, d.x.row(i));
        tp += pred && d.y[i];
        fp += pred && !d.y[i];
        fn += !pred && d.y[i];
    }
    const double f1 = 2.0 * double(tp) / double(2 * tp + fp + fn);
    CHECK(rec.mean == doctest::Approx(f1).epsilon(1e-12));
    CHECK(rec.fold_scores[0] == rec.mean);
}

TEST_CASE("run_cv: fold scores match recomputed confusion-matrix F1") {
    const auto d = noisy_data(3, 240, 0.4);
    CvConfig cv;
    cv.seed = 1;
    const Params p{6, 2, 0.08, 0.9};
    const auto rec = run_cv(d.x, d.y, p, cv);
    const auto folds = make_folds(d.y, cv);
    REQUIRE(rec.fold_scores.size() == 3);
    double sum = 0.0;
    for (std::size_t f = 0; f < 3; ++f) {
        std::vector<bool> ty;
        for (auto i : folds[f].train) ty.push_back(d.y[i]);
        const auto model = gbt::train(d.x.select_rows(folds[f].train), ty, p.train_config(1));
        std::size_t tp = 0, fp = 0, fn = 0;
        for (auto i : folds[f].valid) {
            const bool pred = gbt::predict(model, d.x.row(i));
            tp += pred && d.y[i];
            fp += pred && !d.y[i];
            fn += !pred && d.y[i];
        }
        const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        const double rec_ = tp + fn ? double(tp) / double(tp + fn) : 0.0;
        const double f1 = prec + rec_ > 0 ? 2 * prec * rec_ / (prec + rec_) : 0.0;
        CHECK(rec.fold_scores[f] == doctest::Approx(f1).epsilon(1e-12));
        sum += f1;
    }
    CHECK(rec.mean == doctest::Approx(sum / 3));
}

TEST_CASE("run_cv: separable data scores a perfect F1") {
    Labeled d{FeatureMatrix(120, 1), {}};
    for (std::size_t r = 0; r < 120; ++r) {
        d.x(r, 0) = r % 2 ? 1.0 : -1.0;
        d.y.push_back(r % 2);
    }
    const auto rec = run_cv(d.x, d.y, {5, 2, 0.1, 1.0}, CvConfig{});
    for (double s : rec.fold_scores) CHECK(s == 1.0);
    CHECK(rec.mean == 1.0);
    CvConfig acc;
    acc.objective = Objective::Accuracy;
    CHECK(run_cv(d.x, d.y, {5, 2, 0.1, 1.0}, acc).mean == 1.0);
}

TEST_CASE("GaussianProcess: interpolates observations and is uncertain far away") {
    std::vector<Point> xs;
    std::vector<double> ys;
    Rng rng(5);
    for (int i = 0; i < 12; ++i) {
        Point p{rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0, 0.5)};
        xs.push_back(p);
        ys.push_back(std::sin(3 * p[0]) + p[1]);
    }
    GaussianProcess gp;
    gp.fit(xs, ys);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto [mu, sd] = gp.predict(xs[i]);
        CHECK(mu == doctest::Approx(ys[i]).epsilon(0.05));
        CHECK(sd < 0.1);
    }
    const auto [mu_far, sd_far] = gp.predict({1, 1, 1, 1});
    (void)mu_far;
    CHECK(sd_far > gp.predict(xs[0]).second);
    CHECK(matern52(xs[0], xs[0], 0.3) == 1.0);
    CHECK(expected_improvement(1.0, 0.0, 0.5) == doctest::Approx(0.5));
    CHECK(expected_improvement(0.0, 0.0, 0.5) == 0.0);
    CHECK(expected_improvement(0.5, 1.0, 0.5) == doctest::Approx(1.0 / std::sqrt(2 * M_PI)));
}

TEST_CASE("optimize: point space evaluates once") {
    SearchSpace s;
    s.n_estimators = {12, 12};
    s.max_depth = {4, 4};
    s.learning_rate = {0.05, 0.05, true};
    s.colsample_bytree = {0.8, 0.8, false};
    std::size_t calls = 0;
    OptimizeConfig cfg;
    const auto res = optimize(
        s, [&](const Params&, std::size_t) { ++calls; return std::vector<double>{0.7}; }, cfg);
    CHECK(calls == 1);
    CHECK(res.history.size() == 1);
    CHECK(res.best == Params{12, 4, 0.05, 0.8});
}

TEST_CASE("optimize: random first trials, bounds, determinism and best selection") {
    const SearchSpace s;
    const Planted f{s, {20, 7, 0.02, 0.75}};
    auto eval = [&](const Params& p, std::size_t) { return std::vector<double>{f(p)}; };

    OptimizeConfig one;
    one.iterations = 1;
    one.seed = 9;
    const auto a = optimize(s, eval, one), b = optimize(s, eval, one);
    CHECK(a.history.size() == 1);
    CHECK(a.history[0].params == b.history[0].params);
    one.seed = 10;
    CHECK_FALSE(optimize(s, eval, one).history[0].params == a.history[0].params);

    OptimizeConfig cfg;
    cfg.iterations = 25;
    cfg.seed = 3;
    const auto r1 = optimize(s, eval, cfg), r2 = optimize(s, eval, cfg);
    REQUIRE(r1.history.size() == 25);
    double best = -1;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].trial_index == i);
        CHECK(contains(s, r1.history[i].params));
        CHECK(r1.history[i].params == r2.history[i].params);
        CHECK(r1.history[i].mean == r2.history[i].mean);
        if (r1.history[i].mean > best) {
            best = r1.history[i].mean;
            best_i = i;
        }
    }
    CHECK(r1.best_score == best);
    CHECK(r1.best_index == best_i);

    // The first trials do not depend on scores.
    auto flat = [](const Params&, std::size_t) { return std::vector<double>{0.0}; };
    const auto r3 = optimize(s, flat, cfg);
    for (std::size_t i = 0; i < 10; ++i) CHECK(r3.history[i].params == r1.history[i].params);
    CHECK(r3.best_index == 0);

    cfg.threads = 3;
    const auto r4 = optimize(s, eval, cfg);
    for (std::size_t i = 0; i < 25; ++i) CHECK(r4.history[i].params == r1.history[i].params);
}

TEST_CASE("optimize: finds a planted optimum within 5% in at least 4 of 5 seeds") {
    const SearchSpace s;
    const Planted f{s, {18, 8, 0.015, 0.7}};
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        OptimizeConfig cfg;
        cfg.seed = seed;
        const auto res = optimize(s, [&](const Params& p, std::size_t) { return std::vector<double>{f(p)}; }, cfg);
        CHECK(res.history.size() == 50);
        hits += res.best_score >= 0.95;
    }
    CHECK(hits >= 4);
}

TEST_CASE("optimize: history file resumes and rejects mismatches") {
    const SearchSpace s;
    const Planted f{s, {10, 5, 0.05, 0.9}};
    std::size_t calls = 0;
    auto eval = [&](const Params& p, std::size_t) { ++calls; return std::vector<double>{f(p), f(p) / 2}; };
    const auto path = temp_path("ppaml_hpo_history.jsonl");
    std::remove(path.c_str());

    OptimizeConfig cfg;
    cfg.iterations = 15;
    cfg.seed = 21;
    const auto full = optimize(s, eval, cfg);

    cfg.history_path = path;
    cfg.iterations = 12;
    optimize(s, eval, cfg);
    {
        std::ifstream in(path);
        std::size_t lines = 0;
        for (std::string l; std::getline(in, l);) ++lines;
        CHECK(lines == 13);
    }
    calls = 0;
    cfg.iterations = 15;
    cfg.resume = true;
    const auto resumed = optimize(s, eval, cfg);
    CHECK(calls == 3);
    REQUIRE(resumed.history.size() == 15);
    for (std::size_t i = 0; i < 15; ++i) {
        CHECK(resumed.history[i].params == full.history[i].params);
        CHECK(resumed.history[i].fold_scores == full.history[i].fold_scores);
    }
    CHECK(resumed.best == full.best);

    cfg.seed = 22;
    CHECK(code_of([&] { optimize(s, eval, cfg); }) == Errc::ResumeMismatch);

    // A tampered suggestion is detected on replay.
    cfg.seed = 21;
    optimize(s, eval, cfg);
    std::vector<std::string> lines;
    {
        std::ifstream in(path);
        for (std::string l; std::getline(in, l);) lines.push_back(l);
    }
    auto j = nlohmann::json::parse(lines[5]);
    j["params"]["max_depth"] = j["params"]["max_depth"].get<int>() == 2 ? 3 : 2;
    lines[5] = j.dump();
    {
        std::ofstream out(path);
        for (const auto& l : lines) out << l << '\n';
    }
    CHECK(code_of([&] { optimize(s, eval, cfg); }) == Errc::ResumeMismatch);
    std::remove(path.c_str());
}

TEST_CASE("optimize: dataset overload surfaces InfeasibleFolds") {
    FeatureMatrix x(20, 1);
    std::vector<bool> y(20, false);
    y[0] = true;
    OptimizeConfig cfg;
    cfg.iterations = 3;
    CHECK(code_of([&] { optimize(x, y, SearchSpace{}, CvConfig{}, cfg); }) == Errc::InfeasibleFolds);

    const auto d = noisy_data(8, 150, 0.2);
    const auto res = optimize(d.x, d.y, SearchSpace{}, CvConfig{}, cfg);
    CHECK(res.history.size() == 3);
    for (const auto& r : res.history) CHECK(r.fold_scores.size() == 3);
}

TEST_CASE("TrialRecord: JSON round-trip") {
    TrialRecord r{4, {7, 3, 0.0123456789, 0.61}, {0.5, 0.25, 1.0 / 3}, 0.3611, 0.25};
    CHECK(trial_from_json(nlohmann::json::parse(to_json(r).dump())) == r);
    CHECK(search_space_from_json(to_json(SearchSpace{})) == SearchSpace{});
}
