// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Thresholds are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ppaml/collab.hpp"
#include "ppaml/data.hpp"
#include "ppaml/experiment.hpp"
#include "ppaml/fhe.hpp"
#include "ppaml/graphfeat.hpp"
#include "ppaml/hpo.hpp"
#include "ppaml/quant.hpp"
#include "ppaml/rng.hpp"
#include "ppaml/wire.hpp"

using namespace ppaml;
using graphfeat::Tier;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kOracleBudgetSeconds = 60.0;
constexpr double kStumpBudgetSeconds = 30.0;
constexpr double kUpliftMin = 0.03;
constexpr double kIllicitLo = 0.05, kIllicitHi = 0.065;
constexpr double kBalancedF1Min = 0.95;
constexpr double kCollabBudgetSeconds = 30.0;
constexpr double kHpoWithin = 0.05;
constexpr int kHpoHitsMin = 4;
constexpr double kHpoBudgetSeconds = 120.0;
constexpr int kSeeds = 5;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Pipeline pieces shared by several criteria.

struct Split {
    graphfeat::FeatureTable train, test;
};

Split tables(const experiment::ExperimentConfig& cfg, Tier tier) {
    const auto p = experiment::prepare_data(cfg);
    return {graphfeat::make_table(p.train, tier, cfg.window), graphfeat::make_table(p.test, tier, cfg.window)};
}

quant::QuantizedModel fit(const graphfeat::FeatureTable& train, const gbt::TrainConfig& tc, int n_bits) {
    quant::QuantizedModel m;
    m.source = gbt::train(train.features, train.labels, tc);
    m.source.feature_names = train.columns;
    m.quantized = quant::quantize_ensemble(m.source, quant::calibrate(train.features, n_bits));
    m.quantized.feature_names = train.columns;
    return m;
}

// Fixed booster used for the sweeps: 20 trees, depth 3, lr 0.07, colsample 0.98.
gbt::TrainConfig sweep_config(std::uint64_t seed) {
    gbt::TrainConfig tc;
    tc.n_estimators = 20;
    tc.max_depth = 3;
    tc.learning_rate = 0.07;
    tc.colsample_bytree = 0.98;
    tc.seed = seed;
    return tc;
}

experiment::ExperimentConfig balanced_config(std::uint64_t seed) {
    experiment::ExperimentConfig c;
    c.apply_seed(seed);
    c.balance_ratio = 0.5;
    return c;
}

// Reference-shaped corpus from which pattern groups are sampled down to a
// few percent illicit.
experiment::ExperimentConfig imbalanced_config(std::uint64_t seed) {
    experiment::ExperimentConfig c;
    c.apply_seed(seed);
    c.synthetic.group_counts = {20, 26, 25, 26, 23};
    c.synthetic.background_count = 9000;
    c.sample_groups = 73;
    return c;
}

// ---------------------------------------------------------------------------

Verdict graph_oracle() {
    const auto t0 = Clock::now();
    constexpr std::int64_t kDelta = 86400;
    Rng rng(20240601);
    std::size_t edges = 0, mismatches = 0;
    std::array<std::size_t, 7> nonzero{};
    for (int w = 0; w < 200; ++w) {
        graphfeat::WindowConfig cfg;
        cfg.window_seconds = kDelta;
        cfg.both_direction_stats = true;
        const auto vertices = 2 + rng.below(11);
        const auto n = 1 + rng.below(40);
        std::vector<std::int64_t> times(n);
        for (auto& t : times) t = rng.between(0, 2 * kDelta);
        // Coarse ties on some windows so equal timestamps are exercised.
        if (rng.bernoulli(0.5)) {
            for (auto& t : times) t = (t / (kDelta / 8)) * (kDelta / 8);
        }
        std::sort(times.begin(), times.end());
        std::vector<graphfeat::Edge> stream;
        for (std::size_t i = 0; i < n; ++i) {
            graphfeat::Edge e;
            e.src = static_cast<graphfeat::Vertex>(rng.below(vertices));
            e.dst = static_cast<graphfeat::Vertex>(rng.below(vertices));
            if (e.dst == e.src) e.dst = static_cast<graphfeat::Vertex>((e.src + 1) % vertices);
            e.timestamp = times[i];
            e.amount = rng.between(1, 2'000'000);
            e.tx_id = i;
            stream.push_back(e);
        }
        graphfeat::DynamicGraph g(cfg);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& e = stream[i];
            g.insert(e);
            std::vector<graphfeat::Edge> window;
            for (std::size_t j = 0; j <= i; ++j) {
                if (stream[j].timestamp >= e.timestamp - cfg.window_seconds) window.push_back(stream[j]);
            }
            const auto got = g.features(e);
            const auto want = graphfeat::oracle_features(window, e, cfg);
            ++edges;
            mismatches += !(got == want);
            const auto& sh = got.single_hop;
            auto any = [](const graphfeat::Histogram& h) {
                return std::any_of(h.begin(), h.end(), [](auto c) { return c > 0; });
            };
            nonzero[0] += sh.fan_in > 1;
            nonzero[1] += sh.fan_out > 1;
            nonzero[2] += sh.degree_in > 1 || sh.degree_out > 1;
            nonzero[3] += any(got.multi_hop.scatter_gather);
            nonzero[4] += any(got.multi_hop.simple_cycle);
            nonzero[5] += any(got.multi_hop.temporal_cycle);
            nonzero[6] += got.vertex_stats.src_out.variance > 0;
        }
    }
    const double secs = seconds_since(t0);
    const bool exercised = std::all_of(nonzero.begin(), nonzero.end(), [](auto c) { return c > 0; });
    return {mismatches == 0 && exercised && secs < kOracleBudgetSeconds,
            std::to_string(edges) + " edges, " + std::to_string(mismatches) + " mismatches, every family non-trivial: " +
                (exercised ? "yes" : "no") + ", " + fmt(secs, 2) + " s (limit " + fmt(kOracleBudgetSeconds, 0) + ")"};
}

Verdict clear_encrypted_parity() {
    std::size_t runs = 0, equal = 0, rows = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        for (auto tier : {Tier::Basic, Tier::SingleHop, Tier::VertexStats}) {
            for (bool balanced : {true, false}) {
                const auto cfg = balanced ? balanced_config(seed) : imbalanced_config(seed);
                const auto [train, test] = tables(cfg, tier);
                auto tc = sweep_config(seed);
                tc.max_depth = 4;
                const auto m = fit(train, tc, 6);
                const auto& qe = m.quantized;
                const auto keys = fhe::keygen(seed * 31 + static_cast<std::uint64_t>(tier));
                fhe::EvalContext ctx;
                const fhe::EncryptedEnsemble enc(qe);
                std::vector<bool> clear_pred, fhe_pred;
                for (std::size_t r = 0; r < test.rows(); ++r) {
                    const auto q = quant::quantize_row(test.features.row(r), qe.params);
                    clear_pred.push_back(quant::predict_quantized(qe, q).label);
                    const auto ct = enc.evaluate(fhe::encrypt_row(keys.public_key, q, qe.n_bits(), ctx), keys.public_key, ctx);
                    fhe_pred.push_back(quant::finish_score(qe, fhe::decrypt(keys.secret_key, ct)).label);
                }
                ++runs;
                rows += test.rows();
                equal += confusion(test.labels, clear_pred) == confusion(test.labels, fhe_pred);
            }
        }
    }
    return {equal == runs, std::to_string(equal) + "/" + std::to_string(runs) +
                               " model/test pairs with identical confusion matrices over " + std::to_string(rows) +
                               " rows (zero tolerance)"};
}

Verdict stump_parity() {
    const auto t0 = Clock::now();
    Rng rng(77);
    std::size_t levels = 0, exact = 0;
    for (int bits = 2; bits <= 8; ++bits) {
        for (int s = 0; s < 25; ++s) {
            gbt::Ensemble e;
            e.arity = 1;
            e.base_score = rng.uniform(-2, 2);
            gbt::Tree t;
            t.feature_subset = {0};
            t.nodes = {{0, rng.uniform(0, 1), 1, 2, 0.0}, {-1, 0, -1, -1, rng.uniform(-1, 1)},
                       {-1, 0, -1, -1, rng.uniform(-1, 1)}};
            e.trees.push_back(t);
            FeatureMatrix calib(2, 1);
            calib(0, 0) = 0.0;
            calib(1, 0) = 1.0;
            const auto qe = quant::quantize_ensemble(e, quant::calibrate(calib, bits));
            const auto keys = fhe::keygen(static_cast<std::uint64_t>(bits * 100 + s));
            fhe::EvalContext ctx;
            const fhe::EncryptedEnsemble enc(qe);
            for (std::int64_t q = 0; q < (std::int64_t{1} << bits); ++q) {
                const std::vector<std::int64_t> row{q};
                const auto ct = enc.evaluate(fhe::encrypt_row(keys.public_key, row, bits, ctx), keys.public_key, ctx);
                const auto got = fhe::decrypt(keys.secret_key, ct);
                const auto want = quant::quantized_score(qe, row);
                ++levels;
                exact += got == want && qe.dequantize(got) == qe.dequantize(want);
            }
        }
    }
    const double secs = seconds_since(t0);
    return {exact == levels && secs < kStumpBudgetSeconds,
            std::to_string(exact) + "/" + std::to_string(levels) + " levels exact over 175 stumps, n_bits 2..8, " +
                fmt(secs, 2) + " s (limit " + fmt(kStumpBudgetSeconds, 0) + ")"};
}

Verdict n_bits_trend() {
    std::array<double, 3> mean{};
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        const auto [train, test] = tables(balanced_config(seed), Tier::Basic);
        const auto tc = sweep_config(seed);
        const auto source = gbt::train(train.features, train.labels, tc);
        for (int bits = 2; bits <= 4; ++bits) {
            const auto qe = quant::quantize_ensemble(source, quant::calibrate(train.features, bits));
            std::vector<bool> pred;
            for (std::size_t r = 0; r < test.rows(); ++r) {
                pred.push_back(quant::predict_quantized(qe, quant::quantize_row(test.features.row(r), qe.params)).label);
            }
            mean[static_cast<std::size_t>(bits - 2)] += confusion(test.labels, pred).accuracy() / kSeeds;
        }
    }
    const bool ok = mean[0] <= mean[1] && mean[1] <= mean[2];
    return {ok, "mean accuracy n_bits 2/3/4 = " + fmt(mean[0]) + " / " + fmt(mean[1]) + " / " + fmt(mean[2]) +
                    " (non-decreasing required)"};
}

experiment::ExperimentConfig tuned(experiment::ExperimentConfig c, std::size_t iterations) {
    c.tune = true;
    c.optimize.iterations = iterations;
    return c;
}

Verdict single_hop_uplift() {
    const auto t0 = Clock::now();
    std::vector<double> basic, single, uplift;
    bool ratios_ok = true;
    std::ostringstream ratios;
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        auto c = tuned(imbalanced_config(seed), 30);
        c.tiers = {Tier::Basic, Tier::SingleHop};
        const auto res = experiment::run_experiment(c);
        ratios_ok = ratios_ok && res.illicit_ratio >= kIllicitLo && res.illicit_ratio <= kIllicitHi;
        ratios << (seed > 1 ? "," : "") << fmt(100 * res.illicit_ratio, 2);
        basic.push_back(res.reports[0].f1);
        single.push_back(res.reports[1].f1);
        uplift.push_back(single.back() - basic.back());
    }
    const double b = median(basic), s = median(single), u = median(uplift);
    return {ratios_ok && s - b >= kUpliftMin,
            "median minority F1 basic " + fmt(b) + " -> basic+single-hop " + fmt(s) + ", difference of medians " +
                fmt(s - b) + ", median paired uplift " + fmt(u) + " (>= " + fmt(kUpliftMin, 2) + "); illicit % " +
                ratios.str() + "; " + fmt(seconds_since(t0), 1) + " s"};
}

Verdict balanced_headroom() {
    std::vector<double> f1;
    bool all = true;
    std::ostringstream each;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto c = tuned(balanced_config(seed), 50);
        const auto res = experiment::run_experiment(c);
        const auto& r = res.reports.at(0);
        all = all && r.mode == experiment::Mode::Clear && r.tier == Tier::Basic && r.f1 >= kBalancedF1Min &&
              std::abs(res.illicit_ratio - 0.5) < 0.01;
        f1.push_back(r.f1);
        each << (seed > 1 ? ", " : "") << fmt(r.f1);
    }
    return {all, "tuned basic-feature F1 on balanced data per seed: " + each.str() + " (each >= " +
                     fmt(kBalancedF1Min, 2) + ")"};
}

Verdict temporal_split_invariants() {
    Rng rng(4242);
    std::size_t datasets = 0, violations = 0, degenerate = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = 2 + rng.below(300);
        const auto days = 1 + rng.below(20);
        std::vector<data::Transaction> txs;
        for (std::size_t i = 0; i < n; ++i) {
            data::Transaction t;
            t.tx_id = i + 1;
            t.timestamp = static_cast<std::int64_t>(rng.below(days)) * data::kSecondsPerDay +
                          static_cast<std::int64_t>(rng.below(data::kSecondsPerDay));
            t.src = {"b" + std::to_string(rng.below(3)), "a" + std::to_string(rng.below(50))};
            t.dst = {"b" + std::to_string(rng.below(3)), "x" + std::to_string(rng.below(50))};
            t.amount = static_cast<std::int64_t>(1 + rng.below(100000));
            t.currency = "USD";
            t.is_illicit = rng.bernoulli(0.1);
            txs.push_back(t);
        }
        const data::Dataset ds(txs);
        const double frac = rng.uniform(0.05, 0.95);
        try {
            const auto s = data::temporal_split(ds, frac);
            ++datasets;
            std::int64_t max_train = INT64_MIN, min_test = INT64_MAX;
            std::unordered_set<std::uint64_t> train_ids, test_ids;
            std::set<std::int64_t> train_days;
            for (const auto& t : s.train.transactions()) {
                max_train = std::max(max_train, data::day_of(t.timestamp));
                train_ids.insert(t.tx_id);
                train_days.insert(data::day_of(t.timestamp));
            }
            bool straddle = false;
            for (const auto& t : s.test.transactions()) {
                min_test = std::min(min_test, data::day_of(t.timestamp));
                test_ids.insert(t.tx_id);
                straddle = straddle || train_days.count(data::day_of(t.timestamp));
            }
            bool disjoint = true;
            for (auto id : test_ids) disjoint = disjoint && !train_ids.count(id);
            const bool ok = !s.test.empty() && max_train < min_test && !straddle && disjoint &&
                            train_ids.size() + test_ids.size() == ds.size() && s.split_day + 1 == min_test &&
                            max_train <= s.split_day;
            violations += !ok;
        } catch (const Error& e) {
            // A single-day dataset is the only legitimate refusal.
            std::set<std::int64_t> all_days;
            for (const auto& t : ds.transactions()) all_days.insert(data::day_of(t.timestamp));
            if (e.code() == Errc::DegenerateSplit && all_days.size() == 1) ++degenerate;
            else ++violations;
        }
    }
    return {violations == 0 && datasets > 250,
            std::to_string(datasets) + " random datasets split, " + std::to_string(degenerate) +
                " single-day refusals, " + std::to_string(violations) + " invariant violations"};
}

Verdict collaboration_round_trip() {
    static_assert(!wire::WireEncodable<fhe::SecretKey>, "secret keys must have no wire encoding");
    static_assert(!wire::WireEncodable<fhe::KeyPair>, "key pairs must have no wire encoding");
    static_assert(wire::WireEncodable<fhe::PublicKey>);
    const auto t0 = Clock::now();
    auto cfg = imbalanced_config(2);
    const auto [train, test] = tables(cfg, Tier::SingleHop);
    const auto m = fit(train, sweep_config(2), 6);
    const auto& qe = m.quantized;
    const auto rows = quant::quantize_rows(test.features, qe.params);
    collab::LocalData a{Tier::SingleHop, rows.slice_rows(0, 50)}, b{Tier::SingleHop, rows.slice_rows(50, 100)};

    collab::Server server({{"aml", {qe, Tier::SingleHop}}});
    server.start();
    collab::ParticipateConfig pa, pb;
    pa.institution_id = "bank-a";
    pb.institution_id = "bank-b";
    auto fa = std::async(std::launch::async, [&] { return collab::participate(server.endpoint(), a, pa); });
    server.wait_for_registrations(1, std::chrono::seconds(10));
    auto fb = std::async(std::launch::async, [&] { return collab::participate(server.endpoint(), b, pb); });
    server.wait_for_registrations(2, std::chrono::seconds(10));
    const auto keys = fhe::keygen(99);
    const auto res = collab::inquire(server.endpoint(), "aml", Tier::SingleHop, keys, nullptr, {});
    fa.get();
    fb.get();
    server.stop();

    std::size_t exact = 0;
    bool order = res.predictions.size() == 100;
    for (std::size_t i = 0; order && i < 100; ++i) {
        const auto& p = res.predictions[i];
        const auto& local = i < 50 ? a : b;
        const std::size_t r = i % 50;
        order = p.institution_id == (i < 50 ? "bank-a" : "bank-b") && p.row_index == r;
        const auto score = quant::quantized_score(qe, local.rows.row(r));
        exact += p.score == score && p.margin == qe.dequantize(score);
    }
    const double secs = seconds_since(t0);
    return {order && exact == 100 && secs < kCollabBudgetSeconds,
            std::to_string(exact) + "/100 decrypted margins equal local quantized margins; secret keys have no wire "
                                    "encoding (compile-time); " +
                fmt(secs, 2) + " s (limit " + fmt(kCollabBudgetSeconds, 0) + ")"};
}

Verdict cost_monotonicity() {
    const auto [train, test] = tables(balanced_config(7), Tier::Basic);
    const auto keys = fhe::keygen(7);
    auto lut_ops = [&](int trees, int depth) {
        auto tc = sweep_config(7);
        tc.n_estimators = trees;
        tc.max_depth = depth;
        const auto m = fit(train, tc, 3);
        fhe::EvalContext ctx;
        const fhe::EncryptedEnsemble enc(m.quantized);
        for (std::size_t r = 0; r < 50; ++r) {
            const auto q = quant::quantize_row(test.features.row(r), m.quantized.params);
            enc.evaluate(fhe::encrypt_row(keys.public_key, q, 3, ctx), keys.public_key, ctx);
        }
        return ctx.report().lut_ops;
    };
    const auto e5 = lut_ops(5, 3), e10 = lut_ops(10, 3), e20 = lut_ops(20, 3);
    const auto d1 = lut_ops(20, 1), d4 = lut_ops(20, 4), d7 = lut_ops(20, 7);
    const bool ok = e5 < e10 && e10 < e20 && d1 < d4 && d4 < d7;
    return {ok, "lut_ops over 50 rows: n_estimators 5/10/20 = " + std::to_string(e5) + " / " + std::to_string(e10) +
                    " / " + std::to_string(e20) + "; max_depth 1/4/7 = " + std::to_string(d1) + " / " +
                    std::to_string(d4) + " / " + std::to_string(d7) + " (strictly increasing)"};
}

Verdict hpo_sanity() {
    const auto t0 = Clock::now();
    const hpo::SearchSpace space;
    const hpo::Params opt{21, 7, 0.02, 0.8};
    const auto o = hpo::encode(space, opt);
    // Unique maximum of 1 at `opt`; falls to half about 0.21 away in the unit cube.
    auto planted = [&](const hpo::Params& p) {
        const auto u = hpo::encode(space, p);
        double d2 = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) d2 += (u[i] - o[i]) * (u[i] - o[i]);
        return std::exp(-16.0 * d2);
    };
    int hits = 0;
    std::ostringstream each;
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        hpo::OptimizeConfig cfg;
        cfg.iterations = 50;
        cfg.seed = seed;
        const auto res = hpo::optimize(space, [&](const hpo::Params& p, std::size_t) { return std::vector<double>{planted(p)}; },
                                       cfg);
        hits += res.best_score >= (1.0 - kHpoWithin) * planted(opt);
        each << (seed > 1 ? ", " : "") << fmt(res.best_score, 3);
    }
    const double secs = seconds_since(t0);
    return {hits >= kHpoHitsMin && secs < kHpoBudgetSeconds,
            std::to_string(hits) + "/5 seeds within 5% of the optimum (best " + each.str() + "), " + fmt(secs, 2) +
                " s (limit " + fmt(kHpoBudgetSeconds, 0) + ")"};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"graph-feature oracle equivalence", graph_oracle},
        {"clear/encrypted metric parity", clear_encrypted_parity},
        {"exhaustive stump parity", stump_parity},
        {"n_bits fidelity trend", n_bits_trend},
        {"single-hop uplift on imbalanced data", single_hop_uplift},
        {"balanced-dataset headroom", balanced_headroom},
        {"temporal-split invariants", temporal_split_invariants},
        {"collaboration round-trip", collaboration_round_trip},
        {"cost monotonicity", cost_monotonicity},
        {"HPO sanity", hpo_sanity},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << v.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
