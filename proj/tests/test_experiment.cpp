#include "doctest.h"

#include <optional>
#include <sstream>

#include "ppaml/experiment.hpp"
#include "ppaml/rng.hpp"

using namespace ppaml;
using namespace ppaml::experiment;
using graphfeat::Tier;

namespace {

std::optional<Errc> code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

// Independent recomputation straight from the definitions.
struct Oracle {
    double accuracy, precision, recall, f1;
};

Oracle oracle_metrics(const std::vector<bool>& y, const std::vector<bool>& p) {
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] && p[i]) ++tp;
        else if (!y[i] && p[i]) ++fp;
        else if (!y[i] && !p[i]) ++tn;
        else ++fn;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return {(tp + tn) / static_cast<double>(y.size()), prec, rec,
            prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0};
}

ExperimentConfig small_config(std::uint64_t seed = 3) {
    ExperimentConfig c;
    c.apply_seed(seed);
    c.synthetic.group_counts = {5, 6, 6, 6, 5};
    c.synthetic.background_count = 2500;
    c.synthetic.time_span_seconds = 12 * data::kSecondsPerDay;
    c.train.n_estimators = 8;
    c.train.max_depth = 3;
    c.train.learning_rate = 0.3;
    return c;
}

void check_same_metrics(const MetricsReport& a, const MetricsReport& b) {
    CHECK(a.confusion == b.confusion);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.f1 == b.f1);
    CHECK(a.precision == b.precision);
    CHECK(a.recall == b.recall);
}

} // namespace

TEST_CASE("metrics: closed-form examples") {
    // {tp=2, fp=1, fn=3, tn=4}
    const std::vector<bool> y{true, true, false, true, true, true, false, false, false, false};
    const std::vector<bool> p{true, true, true, false, false, false, false, false, false, false};
    const auto r = compute_metrics(y, p);
    CHECK(r.confusion == Confusion{2, 1, 4, 3});
    const double prec = 2.0 / 3.0, rec = 2.0 / 5.0;
    CHECK(r.precision == doctest::Approx(prec).epsilon(1e-15));
    CHECK(r.recall == doctest::Approx(rec).epsilon(1e-15));
    CHECK(r.f1 == doctest::Approx(2 * prec * rec / (prec + rec)).epsilon(1e-15));
    CHECK(r.f1 == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.accuracy == doctest::Approx(0.6));

    const auto perfect = compute_metrics(y, y);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    std::vector<bool> imbalanced(50, false);
    imbalanced[7] = imbalanced[30] = true;
    const auto majority = compute_metrics(imbalanced, std::vector<bool>(50, false));
    CHECK(majority.recall == 0.0);
    CHECK(majority.f1 == 0.0);
    CHECK(majority.accuracy == doctest::Approx(0.96));

    CHECK(code_of([] { compute_metrics({true}, {true, false}); }) == Errc::LengthMismatch);
    CHECK(code_of([] { compute_metrics({}, {}); }) == Errc::LengthMismatch);
}

TEST_CASE("metrics: arithmetic equals an independent recomputation") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(60);
        const double base = rng.uniform(0, 1);
        std::vector<bool> y(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(base);
            p[i] = rng.bernoulli(0.5);
        }
        const auto r = compute_metrics(y, p);
        const auto o = oracle_metrics(y, p);
        CHECK(r.confusion.total() == n);
        CHECK(r.accuracy == doctest::Approx(o.accuracy).epsilon(1e-12));
        CHECK(r.precision == doctest::Approx(o.precision).epsilon(1e-12));
        CHECK(r.recall == doctest::Approx(o.recall).epsilon(1e-12));
        CHECK(r.f1 == doctest::Approx(o.f1).epsilon(1e-12));
    }
}

TEST_CASE("experiment: a single clear row") {
    auto c = small_config();
    const auto res = run_experiment(c);
    REQUIRE(res.reports.size() == 1);
    const auto& r = res.reports[0];
    CHECK(r.tier == Tier::Basic);
    CHECK(r.mode == Mode::Clear);
    CHECK(r.confusion.total() == res.runs[0].test_rows);
    CHECK(res.runs[0].train_rows + res.runs[0].test_rows == res.dataset_rows);
    CHECK(r.batches == 20);
    CHECK(r.time_ratio == doctest::Approx(1.0));
    CHECK(r.lut_ops == 0);
    CHECK(r.avg_batch_time == doctest::Approx(r.total_time / 20));
}

TEST_CASE("experiment: quant and fhe-sim columns are identical on every tier") {
    auto c = small_config(4);
    c.tiers = {Tier::Basic, Tier::SingleHop, Tier::MultiHop, Tier::VertexStats};
    c.eval.modes = {Mode::Clear, Mode::Quant, Mode::FheSim};
    const auto res = run_experiment(c);
    REQUIRE(res.reports.size() == 12);
    for (std::size_t t = 0; t < 4; ++t) {
        const auto& clear = res.reports[3 * t];
        const auto& q = res.reports[3 * t + 1];
        const auto& f = res.reports[3 * t + 2];
        CHECK(clear.tier == c.tiers[t]);
        CHECK(q.tier == c.tiers[t]);
        CHECK(f.tier == c.tiers[t]);
        CHECK(clear.mode == Mode::Clear);
        CHECK(q.mode == Mode::Quant);
        CHECK(f.mode == Mode::FheSim);
        check_same_metrics(q, f);
        CHECK(q.lut_ops == 0);
        CHECK(f.lut_ops > 0);
        CHECK(f.confusion.total() == res.runs[t].test_rows);
    }
    // Each tier's model sees a strict extension of the previous tier's columns.
    for (std::size_t t = 1; t < 4; ++t) {
        const auto& prev = res.runs[t - 1].model.quantized.feature_names;
        const auto& cur = res.runs[t].model.quantized.feature_names;
        REQUIRE(cur.size() > prev.size());
        CHECK(std::equal(prev.begin(), prev.end(), cur.begin()));
    }
}

TEST_CASE("experiment: deterministic apart from wall time, also in parallel") {
    auto c = small_config(5);
    c.tiers = {Tier::Basic, Tier::SingleHop};
    c.eval.modes = {Mode::Quant, Mode::FheSim};
    const auto a = run_experiment(c);
    c.threads = 2;
    const auto b = run_experiment(c);
    REQUIRE(a.reports.size() == b.reports.size());
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
        CHECK(a.reports[i].tier == b.reports[i].tier);
        CHECK(a.reports[i].mode == b.reports[i].mode);
        check_same_metrics(a.reports[i], b.reports[i]);
        CHECK(a.reports[i].lut_ops == b.reports[i].lut_ops);
        CHECK(a.reports[i].add_ops == b.reports[i].add_ops);
    }
    for (std::size_t i = 0; i < a.runs.size(); ++i) CHECK(a.runs[i].model.quantized == b.runs[i].model.quantized);
    CHECK(a.split_day == b.split_day);
}

TEST_CASE("experiment: tuning, imbalance controls and stage annotation") {
    auto c = small_config(6);
    c.tune = true;
    c.optimize.iterations = 12;
    c.optimize.initial_random = 6;
    c.sample_groups = 20;
    const auto res = run_experiment(c);
    REQUIRE(res.runs[0].tuning);
    CHECK(res.runs[0].tuning->history.size() == 12);
    CHECK(res.runs[0].params == res.runs[0].tuning->best);
    CHECK(res.runs[0].model.source.trees.size() == static_cast<std::size_t>(res.runs[0].params.n_estimators));

    auto balanced = small_config(6);
    balanced.balance_ratio = 0.5;
    const auto bres = run_experiment(balanced);
    CHECK(bres.illicit_ratio == doctest::Approx(0.5).epsilon(0.01));

    auto too_many = small_config();
    too_many.sample_groups = 1000;
    try {
        run_experiment(too_many);
        FAIL("expected a failure");
    } catch (const StageError& e) {
        CHECK(e.stage() == "sample");
        CHECK(e.code() == Errc::InvalidConfig);
        CHECK(std::string(e.what()).rfind("InvalidConfig: sample: ", 0) == 0);
    }

    auto one_day = small_config();
    one_day.synthetic.time_span_seconds = data::kSecondsPerDay;
    one_day.synthetic.pattern_window_seconds = 3600;
    try {
        run_experiment(one_day);
        FAIL("expected a failure");
    } catch (const StageError& e) {
        CHECK(e.stage() == "split");
        CHECK(e.code() == Errc::DegenerateSplit);
    }

    auto no_modes = small_config();
    no_modes.eval.modes.clear();
    CHECK(code_of([&] { run_experiment(no_modes); }) == Errc::InvalidConfig);
}

TEST_CASE("evaluate_model: argument checks") {
    auto c = small_config();
    const auto res = run_experiment(c);
    const auto& model = res.runs[0].model;
    FeatureMatrix x(3, model.quantized.arity);
    EvalConfig ec;
    CHECK(code_of([&] { evaluate_model(model, x, {true, false}, Tier::Basic, ec); }) == Errc::LengthMismatch);
    FeatureMatrix wrong(2, model.quantized.arity + 1);
    CHECK(code_of([&] { evaluate_model(model, wrong, {true, false}, Tier::Basic, ec); }) == Errc::ArityMismatch);
    ec.modes = {Mode::Quant, Mode::Quant};
    CHECK(code_of([&] { evaluate_model(model, x, {true, false, true}, Tier::Basic, ec); }) == Errc::InvalidConfig);
    // Fewer rows than timing batches: one row per batch.
    ec.modes = {Mode::FheSim};
    const auto out = evaluate_model(model, x, {true, false, true}, Tier::Basic, ec);
    CHECK(out.reports[0].batches == 3);
}

TEST_CASE("report: column order, empty documents and CSV round-trip") {
    const std::vector<std::string> expected{"tier",           "mode",       "accuracy",   "f1",
                                            "precision",      "recall",     "avg_batch_time",
                                            "total_time",     "time_ratio", "lut_ops"};
    CHECK(report_columns() == expected);

    const auto csv = render_report({}, ReportFormat::Csv);
    CHECK(csv == "tier,mode,accuracy,f1,precision,recall,avg_batch_time,total_time,time_ratio,lut_ops\n");
    const auto text = render_report({}, ReportFormat::Text);
    CHECK(text.rfind("tier", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    const auto json = nlohmann::json::parse(render_report({}, ReportFormat::Json));
    CHECK(json.at("rows").empty());
    CHECK(json.at("columns") == expected);

    MetricsReport r;
    r.tier = Tier::MultiHop;
    r.mode = Mode::FheSim;
    r.accuracy = 0.1 + 0.2;
    r.f1 = 2.0 / 3.0;
    r.precision = 1.0 / 7.0;
    r.recall = 0.5;
    r.avg_batch_time = 1.2345678901234e-5;
    r.total_time = 3.3e-3;
    r.time_ratio = 123.456;
    r.lut_ops = 98765;
    std::istringstream in(render_report({r}, ReportFormat::Csv));
    const auto back = report_from_csv(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].tier == r.tier);
    CHECK(back[0].mode == r.mode);
    CHECK(back[0].accuracy == r.accuracy);
    CHECK(back[0].f1 == r.f1);
    CHECK(back[0].precision == r.precision);
    CHECK(back[0].recall == r.recall);
    CHECK(back[0].avg_batch_time == r.avg_batch_time);
    CHECK(back[0].total_time == r.total_time);
    CHECK(back[0].time_ratio == r.time_ratio);
    CHECK(back[0].lut_ops == r.lut_ops);

    r.confusion = {1, 2, 3, 4};
    r.add_ops = 7;
    r.batches = 20;
    const auto j = nlohmann::json::parse(render_report({r}, ReportFormat::Json));
    const auto jr = report_from_json(j);
    REQUIRE(jr.size() == 1);
    CHECK(jr[0].confusion == r.confusion);
    CHECK(jr[0].add_ops == 7);
    CHECK(jr[0].f1 == r.f1);
    // Parsing sorts keys, so the order is checked on the ordered rendering.
    const auto ordered = report_to_json({r});
    std::vector<std::string> okeys;
    for (auto it = ordered.at("rows")[0].begin(); it != ordered.at("rows")[0].end(); ++it) okeys.push_back(it.key());
    CHECK(std::equal(expected.begin(), expected.end(), okeys.begin()));

    std::istringstream bad("tier,mode\nbasic,clear\n");
    CHECK(code_of([&] { report_from_csv(bad); }) == Errc::MalformedRow);
}

TEST_CASE("config: key = value files") {
    std::istringstream in(R"(# experiment
seed = 9
tiers = basic, single_hop
modes = quant,fhe-sim
n_bits = 4   # narrow
groups.fan-in = 3
histogram_bins = 2,4
tune = true
objective = accuracy
)");
    const auto kv = read_key_values(in);
    CHECK(kv.at("seed") == "9");
    CHECK(kv.at("n_bits") == "4");
    const auto c = experiment_config_from(kv);
    CHECK(c.seed == 9);
    CHECK(c.synthetic.seed == 9);
    CHECK(c.train.seed == 9);
    CHECK(c.tiers == std::vector<Tier>{Tier::Basic, Tier::SingleHop});
    CHECK(c.eval.modes == std::vector<Mode>{Mode::Quant, Mode::FheSim});
    CHECK(c.n_bits == 4);
    CHECK(c.synthetic.group_counts[static_cast<std::size_t>(data::PatternKind::FanIn)] == 3);
    CHECK(c.window.histogram_bins == std::vector<std::size_t>{2, 4});
    CHECK(c.tune);
    CHECK(c.cv.objective == hpo::Objective::Accuracy);

    CHECK(experiment_config_from({{"tiers", "all"}}).tiers.size() == 4);
    CHECK(code_of([] { experiment_config_from({{"nope", "1"}}); }) == Errc::InvalidConfig);
    CHECK(code_of([] { experiment_config_from({{"n_bits", "four"}}); }) == Errc::InvalidConfig);
    CHECK(code_of([] { experiment_config_from({{"tiers", "basic,bogus"}}); }) == Errc::InvalidConfig);
    CHECK(code_of([] { experiment_config_from({{"synthetic.background", "-5"}}); }) == Errc::InvalidConfig);
    std::istringstream dup("a = 1\na = 2\n");
    CHECK(code_of([&] { read_key_values(dup); }) == Errc::InvalidConfig);
    std::istringstream noeq("just words\n");
    CHECK(code_of([&] { read_key_values(noeq); }) == Errc::InvalidConfig);

    std::size_t documented = 0;
    for (const auto& [key, help] : config_keys()) {
        CHECK(!help.empty());
        ++documented;
    }
    CHECK(documented > 30);
}
