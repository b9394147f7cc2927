#include "ppaml/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "ppaml/csv.hpp"
#include "ppaml/fhe.hpp"

namespace ppaml::experiment {

using graphfeat::Tier;

std::string_view to_string(Mode mode) noexcept {
    switch (mode) {
    case Mode::Clear: return "clear";
    case Mode::Quant: return "quant";
    case Mode::FheSim: return "fhe-sim";
    }
    return "?";
}

std::optional<Mode> parse_mode(std::string_view text) noexcept {
    for (auto m : {Mode::Clear, Mode::Quant, Mode::FheSim}) {
        if (text == to_string(m)) return m;
    }
    return std::nullopt;
}

MetricsReport compute_metrics(const std::vector<bool>& labels, const std::vector<bool>& predictions) {
    MetricsReport r;
    r.confusion = confusion(labels, predictions);
    r.accuracy = r.confusion.accuracy();
    r.precision = r.confusion.precision();
    r.recall = r.confusion.recall();
    r.f1 = r.confusion.f1();
    return r;
}

void EvalConfig::validate() const {
    if (modes.empty()) fail(Errc::InvalidConfig, "at least one eval mode is required");
    for (std::size_t i = 0; i < modes.size(); ++i) {
        if (std::find(modes.begin(), modes.begin() + static_cast<std::ptrdiff_t>(i), modes[i]) !=
            modes.begin() + static_cast<std::ptrdiff_t>(i)) {
            fail(Errc::InvalidConfig, "duplicate eval mode " + std::string(to_string(modes[i])));
        }
    }
    if (!(threshold > 0.0 && threshold < 1.0)) fail(Errc::InvalidConfig, "threshold must be in (0, 1)");
    if (timing_batches == 0) fail(Errc::InvalidConfig, "timing_batches must be positive");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Contiguous batch boundaries, sizes differing by at most one.
std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t batches) {
    batches = std::max<std::size_t>(1, std::min(batches, n));
    std::vector<std::size_t> b(batches + 1);
    for (std::size_t i = 0; i <= batches; ++i) b[i] = n * i / batches;
    return b;
}

struct ModeRun {
    std::vector<bool> labels;
    double total = 0.0;
    std::size_t batches = 0;
    fhe::CostReport cost;
};

ModeRun run_mode(Mode mode, const quant::QuantizedModel& model, const FeatureMatrix& x, const EvalConfig& cfg,
                 const fhe::KeyPair& keys) {
    const auto& qe = model.quantized;
    const auto bounds = batch_bounds(x.rows(), cfg.timing_batches);
    ModeRun run;
    run.labels.resize(x.rows());
    run.batches = bounds.size() - 1;
    fhe::EvalContext ctx(16, std::max(qe.accumulator_bits, quant::kDefaultAccumulatorBits));
    std::optional<fhe::EncryptedEnsemble> enc;
    if (mode == Mode::FheSim) enc.emplace(qe);

    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
        const auto t0 = Clock::now();
        for (std::size_t r = bounds[b]; r < bounds[b + 1]; ++r) {
            const auto row = x.row(r);
            switch (mode) {
            case Mode::Clear:
                run.labels[r] = gbt::predict(model.source, row, cfg.threshold);
                break;
            case Mode::Quant:
                run.labels[r] = quant::predict_quantized(qe, quant::quantize_row(row, qe.params), cfg.threshold).label;
                break;
            case Mode::FheSim: {
                const auto q = quant::quantize_row(row, qe.params);
                const auto cts = fhe::encrypt_row(keys.public_key, q, qe.n_bits(), ctx);
                const auto score = enc->evaluate(cts, keys.public_key, ctx);
                run.labels[r] = quant::finish_score(qe, fhe::decrypt(keys.secret_key, score), cfg.threshold).label;
                break;
            }
            }
        }
        run.total += seconds_since(t0);
    }
    run.cost = ctx.report();
    return run;
}

} // namespace

EvalOutcome evaluate_model(const quant::QuantizedModel& model, const FeatureMatrix& x, const std::vector<bool>& y,
                           Tier tier, const EvalConfig& cfg) {
    cfg.validate();
    if (x.rows() != y.size()) {
        fail(Errc::LengthMismatch, std::to_string(x.rows()) + " rows but " + std::to_string(y.size()) + " labels");
    }
    if (x.rows() == 0) fail(Errc::LengthMismatch, "empty evaluation set");
    if (x.cols() != model.quantized.arity) {
        fail(Errc::ArityMismatch, "model expects " + std::to_string(model.quantized.arity) + " features, got " +
                                      std::to_string(x.cols()));
    }
    const auto keys = fhe::keygen(cfg.key_seed);

    std::map<Mode, ModeRun> runs;
    runs.emplace(Mode::Clear, run_mode(Mode::Clear, model, x, cfg, keys));
    for (auto m : cfg.modes) {
        if (m != Mode::Clear) runs.emplace(m, run_mode(m, model, x, cfg, keys));
    }
    if (runs.count(Mode::Quant) && runs.count(Mode::FheSim) &&
        runs.at(Mode::Quant).labels != runs.at(Mode::FheSim).labels) {
        fail(Errc::PipelineError, "quantized and encrypted predictions differ");
    }

    const double baseline = runs.at(Mode::Clear).total;
    EvalOutcome out;
    for (auto m : cfg.modes) {
        const auto& run = runs.at(m);
        auto r = compute_metrics(y, run.labels);
        r.tier = tier;
        r.mode = m;
        r.batches = run.batches;
        r.total_time = run.total;
        r.avg_batch_time = run.total / static_cast<double>(run.batches);
        r.time_ratio = baseline > 0.0 ? run.total / baseline : 0.0;
        r.lut_ops = run.cost.lut_ops;
        r.add_ops = run.cost.add_ops;
        out.reports.push_back(r);
        out.predictions.emplace(m, run.labels);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

data::SyntheticConfig ExperimentConfig::default_synthetic() {
    data::SyntheticConfig s;
    s.group_counts = {12, 16, 15, 16, 14};
    s.background_count = 9000;
    s.time_span_seconds = 20 * data::kSecondsPerDay;
    return s;
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
    seed = s;
    synthetic.seed = s;
    train.seed = s;
    cv.seed = s;
    optimize.seed = s;
    eval.key_seed = s;
}

void ExperimentConfig::validate() const {
    if (tiers.empty()) fail(Errc::InvalidConfig, "at least one tier is required");
    for (std::size_t i = 0; i < tiers.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (tiers[i] == tiers[j]) fail(Errc::InvalidConfig, "duplicate tier");
        }
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(Errc::InvalidConfig, "train_fraction must be in (0, 1)");
    if (balance_ratio && !(*balance_ratio > 0.0 && *balance_ratio < 1.0)) {
        fail(Errc::InvalidConfig, "balance_ratio must be in (0, 1)");
    }
    if (threads == 0) fail(Errc::InvalidConfig, "threads must be positive");
    window.validate();
    train.validate();
    quant::check_bits(n_bits);
    if (tune) space.validate();
    eval.validate();
}

StageError::StageError(const std::string& stage, const Error& cause)
    : Error(cause.code(), stage + ": " + [&] {
          // Drop the code prefix the cause already carries.
          std::string what = cause.what();
          const auto prefix = std::string(errc_name(cause.code())) + ": ";
          return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
      }()),
      stage_(stage) {}

namespace {

template <class F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

data::Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset_path.empty()) return data::generate_synthetic(cfg.synthetic);
    std::ifstream in(cfg.dataset_path);
    if (!in) fail(Errc::InvalidConfig, "cannot open " + cfg.dataset_path);
    auto ds = data::parse_transactions(in);
    if (!cfg.groups_path.empty()) {
        std::ifstream g(cfg.groups_path);
        if (!g) fail(Errc::InvalidConfig, "cannot open " + cfg.groups_path);
        ds = ds.with_groups(data::parse_groups(g));
    }
    return ds;
}

graphfeat::FeatureTable table_for(const std::vector<graphfeat::EnrichedRow>& rows, Tier tier,
                                  const graphfeat::WindowConfig& w) {
    return graphfeat::make_table(rows, tier, w);
}

} // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData p;
    p.dataset = stage("load", [&] { return load_dataset(cfg); });
    if (cfg.sample_groups) {
        p.dataset = stage("sample", [&] {
            return data::sample_pattern_groups(p.dataset, *cfg.sample_groups, cfg.seed, cfg.stratified_groups);
        });
    }
    if (cfg.balance_ratio) {
        p.dataset = stage("balance", [&] { return data::undersample_balanced(p.dataset, *cfg.balance_ratio, cfg.seed); });
    }
    const auto split = stage("split", [&] { return data::temporal_split(p.dataset, cfg.train_fraction); });
    p.split_day = split.split_day;
    // Enrich the whole stream once so test rows see the same window context
    // they would in deployment.
    const auto rows = stage("enrich", [&] { return graphfeat::enrich_dataset(p.dataset, cfg.window); });
    std::unordered_map<std::uint64_t, bool> in_train;
    for (const auto& tx : split.train.transactions()) in_train.emplace(tx.tx_id, true);
    for (const auto& r : rows) (in_train.count(r.tx_id) ? p.train : p.test).push_back(r);
    return p;
}

namespace {

TierRun run_tier(const ExperimentConfig& cfg, const PreparedData& p, Tier tier, std::vector<MetricsReport>& out) {
    TierRun run;
    run.tier = tier;
    const auto train = table_for(p.train, tier, cfg.window);
    const auto test = table_for(p.test, tier, cfg.window);
    run.train_rows = train.rows();
    run.test_rows = test.rows();

    hpo::Params params{cfg.train.n_estimators, cfg.train.max_depth, cfg.train.learning_rate,
                       cfg.train.colsample_bytree};
    if (cfg.tune) {
        auto opt = cfg.optimize;
        if (!opt.history_path.empty()) opt.history_path += "." + std::string(graphfeat::to_string(tier));
        run.tuning = stage("tune", [&] { return hpo::optimize(train.features, train.labels, cfg.space, cfg.cv, opt); });
        params = run.tuning->best;
    }
    run.params = params;
    auto tc = cfg.train;
    tc.n_estimators = params.n_estimators;
    tc.max_depth = params.max_depth;
    tc.learning_rate = params.learning_rate;
    tc.colsample_bytree = params.colsample_bytree;

    run.model.source = stage("train", [&] { return gbt::train(train.features, train.labels, tc); });
    run.model.source.feature_names = train.columns;
    run.model.quantized = stage("quantize", [&] {
        return quant::quantize_ensemble(run.model.source, quant::calibrate(train.features, cfg.n_bits),
                                        cfg.accumulator_bits);
    });
    run.model.quantized.feature_names = train.columns;
    out = stage("eval", [&] { return evaluate_model(run.model, test.features, test.labels, tier, cfg.eval).reports; });
    return run;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    stage("config", [&] { cfg.validate(); });
    const auto p = prepare_data(cfg);
    if (p.test.empty()) throw StageError("split", Error(Errc::DegenerateSplit, "empty test set"));

    ExperimentResult res;
    res.split_day = p.split_day;
    res.dataset_rows = p.dataset.size();
    res.illicit_ratio = p.dataset.illicit_ratio();
    const std::size_t n = cfg.tiers.size();
    std::vector<std::optional<TierRun>> runs(n);
    std::vector<std::vector<MetricsReport>> rows(n);
    std::vector<std::exception_ptr> errors(n);

    auto work = [&](std::size_t i) {
        try {
            runs[i] = run_tier(cfg, p, cfg.tiers[i], rows[i]);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t threads = std::min(cfg.threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) work(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        res.runs.push_back(std::move(*runs[i]));
        res.reports.insert(res.reports.end(), rows[i].begin(), rows[i].end());
    }
    return res;
}

// ---------------------------------------------------------------------------
// Reports

std::optional<ReportFormat> parse_report_format(std::string_view text) noexcept {
    if (text == "text") return ReportFormat::Text;
    if (text == "csv") return ReportFormat::Csv;
    if (text == "json") return ReportFormat::Json;
    return std::nullopt;
}

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{"tier",           "mode",       "accuracy",   "f1",
                                               "precision",      "recall",     "avg_batch_time",
                                               "total_time",     "time_ratio", "lut_ops"};
    return cols;
}

namespace {

std::vector<std::string> csv_fields(const MetricsReport& r) {
    using graphfeat::format_double;
    return {std::string(graphfeat::to_string(r.tier)),
            std::string(to_string(r.mode)),
            format_double(r.accuracy),
            format_double(r.f1),
            format_double(r.precision),
            format_double(r.recall),
            format_double(r.avg_batch_time),
            format_double(r.total_time),
            format_double(r.time_ratio),
            std::to_string(r.lut_ops)};
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string render_text(const std::vector<MetricsReport>& reports) {
    std::vector<std::vector<std::string>> cells{report_columns()};
    for (const auto& r : reports) {
        cells.push_back({std::string(graphfeat::to_string(r.tier)), std::string(to_string(r.mode)),
                         fixed(r.accuracy, 4), fixed(r.f1, 4), fixed(r.precision, 4), fixed(r.recall, 4),
                         fixed(r.avg_batch_time, 6), fixed(r.total_time, 6), fixed(r.time_ratio, 2),
                         std::to_string(r.lut_ops)});
    }
    std::vector<std::size_t> width(report_columns().size(), 0);
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream os;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t c = 0; c < cells[i].size(); ++c) {
            // Names left-aligned, numbers right-aligned.
            if (c < 2) os << std::left;
            else os << std::right;
            os << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << cells[i][c];
        }
        os << '\n';
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w;
            os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        }
    }
    return os.str();
}

Tier tier_from(const std::string& s) {
    const auto t = graphfeat::parse_tier(s);
    if (!t) fail(Errc::InvalidConfig, "unknown tier '" + s + "'");
    return *t;
}

Mode mode_from(const std::string& s) {
    const auto m = parse_mode(s);
    if (!m) fail(Errc::InvalidConfig, "unknown mode '" + s + "'");
    return *m;
}

double number_from(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(Errc::MalformedRow, "not a number: '" + s + "'");
}

} // namespace

nlohmann::ordered_json report_to_json(const std::vector<MetricsReport>& reports) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json j;
        j["tier"] = graphfeat::to_string(r.tier);
        j["mode"] = to_string(r.mode);
        j["accuracy"] = r.accuracy;
        j["f1"] = r.f1;
        j["precision"] = r.precision;
        j["recall"] = r.recall;
        j["avg_batch_time"] = r.avg_batch_time;
        j["total_time"] = r.total_time;
        j["time_ratio"] = r.time_ratio;
        j["lut_ops"] = r.lut_ops;
        j["add_ops"] = r.add_ops;
        j["batches"] = r.batches;
        j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
        rows.push_back(std::move(j));
    }
    nlohmann::ordered_json doc;
    doc["columns"] = report_columns();
    doc["rows"] = std::move(rows);
    return doc;
}

std::vector<MetricsReport> report_from_json(const nlohmann::json& j) {
    std::vector<MetricsReport> out;
    try {
        for (const auto& row : j.at("rows")) {
            MetricsReport r;
            r.tier = tier_from(row.at("tier").get<std::string>());
            r.mode = mode_from(row.at("mode").get<std::string>());
            r.accuracy = row.at("accuracy").get<double>();
            r.f1 = row.at("f1").get<double>();
            r.precision = row.at("precision").get<double>();
            r.recall = row.at("recall").get<double>();
            r.avg_batch_time = row.at("avg_batch_time").get<double>();
            r.total_time = row.at("total_time").get<double>();
            r.time_ratio = row.at("time_ratio").get<double>();
            r.lut_ops = row.at("lut_ops").get<std::uint64_t>();
            r.add_ops = row.value("add_ops", std::uint64_t{0});
            r.batches = row.value("batches", std::size_t{0});
            if (row.contains("confusion")) {
                const auto& c = row.at("confusion");
                r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                               c.at("tn").get<std::size_t>(), c.at("fn").get<std::size_t>()};
            }
            out.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::MalformedRow, std::string("report: ") + e.what());
    }
    return out;
}

std::vector<MetricsReport> report_from_csv(std::istream& in) {
    std::string line;
    if (!csv::read_line(in, line)) fail(Errc::MalformedRow, "missing report header");
    if (csv::split_record(line) != report_columns()) fail(Errc::MalformedRow, "unexpected report header");
    std::vector<MetricsReport> out;
    while (csv::read_line(in, line)) {
        if (line.empty()) continue;
        const auto f = csv::split_record(line);
        if (!f || f->size() != report_columns().size()) fail(Errc::MalformedRow, "bad report row: " + line);
        MetricsReport r;
        r.tier = tier_from((*f)[0]);
        r.mode = mode_from((*f)[1]);
        r.accuracy = number_from((*f)[2]);
        r.f1 = number_from((*f)[3]);
        r.precision = number_from((*f)[4]);
        r.recall = number_from((*f)[5]);
        r.avg_batch_time = number_from((*f)[6]);
        r.total_time = number_from((*f)[7]);
        r.time_ratio = number_from((*f)[8]);
        r.lut_ops = static_cast<std::uint64_t>(number_from((*f)[9]));
        out.push_back(r);
    }
    return out;
}

std::string render_report(const std::vector<MetricsReport>& reports, ReportFormat format) {
    switch (format) {
    case ReportFormat::Text: return render_text(reports);
    case ReportFormat::Csv: {
        std::string s = csv::join(report_columns()) + "\n";
        for (const auto& r : reports) s += csv::join(csv_fields(r)) + "\n";
        return s;
    }
    case ReportFormat::Json: return report_to_json(reports).dump(2) + "\n";
    }
    return {};
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t");
    return std::string(s.substr(a, b - a + 1));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto end = std::min(s.find(',', start), s.size());
        const auto item = trim(std::string_view(s).substr(start, end - start));
        if (!item.empty()) out.push_back(item);
        start = end + 1;
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    if constexpr (std::is_unsigned_v<T>) {
        if (!v.empty() && v[0] == '-') fail(Errc::InvalidConfig, key + ": expected a non-negative integer");
    }
    is >> out;
    if (!is || !is.eof()) fail(Errc::InvalidConfig, key + ": cannot parse '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(Errc::InvalidConfig, key + ": expected true or false");
}

using Setter = void (*)(ExperimentConfig&, const std::string& key, const std::string& value);

struct KeySpec {
    const char* key;
    const char* help;
    Setter set;
};

std::size_t pattern_index(std::string_view key) {
    const auto name = key.substr(key.find('.') + 1);
    const auto kind = data::parse_pattern_kind(name);
    if (!kind) fail(Errc::InvalidConfig, "unknown pattern kind in " + std::string(key));
    return static_cast<std::size_t>(*kind);
}

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs{
        {"seed", "seed for every stage", [](auto& c, auto& k, auto& v) { c.apply_seed(parse_number<std::uint64_t>(k, v)); }},
        {"dataset", "transactions CSV; unset generates synthetic data",
         [](auto& c, auto&, auto& v) { c.dataset_path = v; }},
        {"groups", "pattern-group sidecar for dataset", [](auto& c, auto&, auto& v) { c.groups_path = v; }},
        {"synthetic.background", "licit background transactions",
         [](auto& c, auto& k, auto& v) { c.synthetic.background_count = parse_number<std::size_t>(k, v); }},
        {"synthetic.days", "time span in days",
         [](auto& c, auto& k, auto& v) {
             c.synthetic.time_span_seconds = parse_number<std::int64_t>(k, v) * data::kSecondsPerDay;
         }},
        {"synthetic.min_group_size", "smallest pattern group",
         [](auto& c, auto& k, auto& v) { c.synthetic.min_group_size = parse_number<std::size_t>(k, v); }},
        {"synthetic.max_group_size", "largest pattern group",
         [](auto& c, auto& k, auto& v) { c.synthetic.max_group_size = parse_number<std::size_t>(k, v); }},
        {"synthetic.accounts", "account pool size, 0 derives it",
         [](auto& c, auto& k, auto& v) { c.synthetic.account_pool = parse_number<std::size_t>(k, v); }},
        {"synthetic.banks", "number of banks",
         [](auto& c, auto& k, auto& v) { c.synthetic.bank_count = parse_number<std::size_t>(k, v); }},
        {"groups.fan-in", "fan-in groups to inject",
         [](auto& c, auto& k, auto& v) { c.synthetic.group_counts[pattern_index(k)] = parse_number<std::size_t>(k, v); }},
        {"groups.fan-out", "fan-out groups to inject",
         [](auto& c, auto& k, auto& v) { c.synthetic.group_counts[pattern_index(k)] = parse_number<std::size_t>(k, v); }},
        {"groups.gather-scatter", "gather-scatter groups to inject",
         [](auto& c, auto& k, auto& v) { c.synthetic.group_counts[pattern_index(k)] = parse_number<std::size_t>(k, v); }},
        {"groups.cycle", "cycle groups to inject",
         [](auto& c, auto& k, auto& v) { c.synthetic.group_counts[pattern_index(k)] = parse_number<std::size_t>(k, v); }},
        {"groups.random", "random groups to inject",
         [](auto& c, auto& k, auto& v) { c.synthetic.group_counts[pattern_index(k)] = parse_number<std::size_t>(k, v); }},
        {"sample_groups", "keep this many pattern groups",
         [](auto& c, auto& k, auto& v) { c.sample_groups = parse_number<std::size_t>(k, v); }},
        {"stratified_groups", "sample groups proportionally per kind",
         [](auto& c, auto& k, auto& v) { c.stratified_groups = parse_bool(k, v); }},
        {"balance_ratio", "undersample licit rows to this illicit ratio",
         [](auto& c, auto& k, auto& v) { c.balance_ratio = parse_number<double>(k, v); }},
        {"tiers", "comma list of basic, single_hop, multi_hop, vertex_stats, or all",
         [](auto& c, auto&, auto& v) {
             c.tiers.clear();
             if (v == "all") {
                 c.tiers = {Tier::Basic, Tier::SingleHop, Tier::MultiHop, Tier::VertexStats};
                 return;
             }
             for (const auto& t : split_list(v)) c.tiers.push_back(tier_from(t));
         }},
        {"window_seconds", "graph window length",
         [](auto& c, auto& k, auto& v) { c.window.window_seconds = parse_number<std::int64_t>(k, v); }},
        {"max_cycle_length", "longest cycle counted",
         [](auto& c, auto& k, auto& v) { c.window.max_cycle_length = parse_number<std::size_t>(k, v); }},
        {"histogram_bins", "comma list of bin lower bounds",
         [](auto& c, auto& k, auto& v) {
             c.window.histogram_bins.clear();
             for (const auto& b : split_list(v)) c.window.histogram_bins.push_back(parse_number<std::size_t>(k, b));
         }},
        {"both_direction_stats", "add src-inbound and dst-outbound statistics",
         [](auto& c, auto& k, auto& v) { c.window.both_direction_stats = parse_bool(k, v); }},
        {"train_fraction", "share of rows in the temporal train split",
         [](auto& c, auto& k, auto& v) { c.train_fraction = parse_number<double>(k, v); }},
        {"n_estimators", "trees", [](auto& c, auto& k, auto& v) { c.train.n_estimators = parse_number<int>(k, v); }},
        {"max_depth", "tree depth", [](auto& c, auto& k, auto& v) { c.train.max_depth = parse_number<int>(k, v); }},
        {"learning_rate", "shrinkage",
         [](auto& c, auto& k, auto& v) { c.train.learning_rate = parse_number<double>(k, v); }},
        {"colsample_bytree", "feature fraction per tree",
         [](auto& c, auto& k, auto& v) { c.train.colsample_bytree = parse_number<double>(k, v); }},
        {"l2_lambda", "leaf L2 penalty", [](auto& c, auto& k, auto& v) { c.train.l2_lambda = parse_number<double>(k, v); }},
        {"min_child_weight", "minimum hessian per child",
         [](auto& c, auto& k, auto& v) { c.train.min_child_weight = parse_number<double>(k, v); }},
        {"tune", "run Bayesian optimization before training",
         [](auto& c, auto& k, auto& v) { c.tune = parse_bool(k, v); }},
        {"objective", "tuning objective: f1 or accuracy",
         [](auto& c, auto& k, auto& v) {
             if (v == "f1") c.cv.objective = hpo::Objective::MinorityF1;
             else if (v == "accuracy") c.cv.objective = hpo::Objective::Accuracy;
             else fail(Errc::InvalidConfig, k + ": expected f1 or accuracy");
         }},
        {"folds", "cross-validation folds",
         [](auto& c, auto& k, auto& v) { c.cv.k = parse_number<std::size_t>(k, v); }},
        {"fold_scheme", "temporal or stratified",
         [](auto& c, auto& k, auto& v) {
             if (v == "temporal") c.cv.scheme = hpo::FoldScheme::Temporal;
             else if (v == "stratified") c.cv.scheme = hpo::FoldScheme::Stratified;
             else fail(Errc::InvalidConfig, k + ": expected temporal or stratified");
         }},
        {"iterations", "tuning trials",
         [](auto& c, auto& k, auto& v) { c.optimize.iterations = parse_number<std::size_t>(k, v); }},
        {"initial_random", "random trials before the surrogate",
         [](auto& c, auto& k, auto& v) { c.optimize.initial_random = parse_number<std::size_t>(k, v); }},
        {"candidates", "acquisition candidates per step",
         [](auto& c, auto& k, auto& v) { c.optimize.candidates = parse_number<std::size_t>(k, v); }},
        {"history", "tuning history file (JSONL); one per tier",
         [](auto& c, auto&, auto& v) { c.optimize.history_path = v; }},
        {"resume", "continue from the history file",
         [](auto& c, auto& k, auto& v) { c.optimize.resume = parse_bool(k, v); }},
        {"n_bits", "quantization width", [](auto& c, auto& k, auto& v) { c.n_bits = parse_number<int>(k, v); }},
        {"accumulator_bits", "widest encrypted sum",
         [](auto& c, auto& k, auto& v) { c.accumulator_bits = parse_number<int>(k, v); }},
        {"modes", "comma list of clear, quant, fhe-sim",
         [](auto& c, auto&, auto& v) {
             c.eval.modes.clear();
             for (const auto& m : split_list(v)) c.eval.modes.push_back(mode_from(m));
         }},
        {"threshold", "decision threshold on the probability",
         [](auto& c, auto& k, auto& v) { c.eval.threshold = c.cv.threshold = parse_number<double>(k, v); }},
        {"timing_batches", "test-set batches for timing",
         [](auto& c, auto& k, auto& v) { c.eval.timing_batches = parse_number<std::size_t>(k, v); }},
        {"threads", "worker threads for tiers and random trials",
         [](auto& c, auto& k, auto& v) { c.threads = c.optimize.threads = parse_number<std::size_t>(k, v); }},
    };
    return specs;
}

} // namespace

KeyValues read_key_values(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t n = 0;
    while (csv::read_line(in, line)) {
        ++n;
        const auto hash = line.find('#');
        const auto body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) fail(Errc::InvalidConfig, "line " + std::to_string(n) + ": expected key = value");
        const auto key = trim(std::string_view(body).substr(0, eq));
        const auto value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) fail(Errc::InvalidConfig, "line " + std::to_string(n) + ": empty key");
        if (!kv.emplace(key, value).second) fail(Errc::InvalidConfig, "duplicate key '" + key + "'");
    }
    return kv;
}

ExperimentConfig experiment_config_from(const KeyValues& kv, ExperimentConfig base) {
    // The seed goes first so explicit per-stage keys are not overwritten by it.
    if (auto it = kv.find("seed"); it != kv.end()) base.apply_seed(parse_number<std::uint64_t>("seed", it->second));
    for (const auto& [key, value] : kv) {
        if (key == "seed") continue;
        const auto& specs = key_specs();
        const auto spec =
            std::find_if(specs.begin(), specs.end(), [&](const KeySpec& s) { return key == s.key; });
        if (spec == specs.end()) fail(Errc::InvalidConfig, "unknown config key '" + key + "'");
        spec->set(base, key, value);
    }
    return base;
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
    static const auto keys = [] {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& s : key_specs()) out.emplace_back(s.key, s.help);
        return out;
    }();
    return keys;
}

} // namespace ppaml::experiment
