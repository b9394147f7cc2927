// Command-line front end for the pipeline and the collaboration roles.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <thread>
#include <unordered_set>

#include "CLI11.hpp"
#include "ppaml/collab.hpp"
#include "ppaml/experiment.hpp"

namespace fs = std::filesystem;
using namespace ppaml;
using graphfeat::Tier;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kPipelineError = 4 };

int exit_code_for(Errc code) {
    switch (code) {
    case Errc::InvalidConfig:
    case Errc::UnknownModel:
    case Errc::InfeasibleFolds:
    case Errc::ResumeMismatch:
        return kConfigError;
    case Errc::MalformedRow:
    case Errc::DuplicateTxId:
    case Errc::UnreachableRatio:
    case Errc::DegenerateSplit:
    case Errc::OutOfOrderEdge:
    case Errc::SingleClassData:
    case Errc::ArityMismatch:
    case Errc::RangeViolation:
    case Errc::InvalidModel:
    case Errc::LengthMismatch:
        return kDataError;
    default:
        return kPipelineError;
    }
}

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out_dir = ".";

    experiment::ExperimentConfig config() const {
        experiment::ExperimentConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) fail(Errc::InvalidConfig, "cannot open config " + config_path);
            cfg = experiment::experiment_config_from(experiment::read_key_values(in));
        }
        if (seed) cfg.apply_seed(*seed);
        return cfg;
    }

    fs::path out(const std::string& explicit_path, const std::string& name) const {
        if (!explicit_path.empty()) return explicit_path;
        fs::create_directories(out_dir);
        return fs::path(out_dir) / name;
    }
};

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p);
    if (!in) fail(Errc::InvalidConfig, "cannot open " + p.string());
    return in;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) fail(Errc::InvalidConfig, "cannot write " + p.string());
    return out;
}

std::string slurp(const fs::path& p) {
    auto in = open_in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tier tier_arg(const std::string& s) {
    const auto t = graphfeat::parse_tier(s);
    if (!t) fail(Errc::InvalidConfig, "unknown tier '" + s + "'");
    return *t;
}

graphfeat::FeatureTable read_table(const fs::path& p) {
    auto in = open_in(p);
    return graphfeat::read_features(in);
}

Tier model_tier(const quant::QuantizedEnsemble& qe, const graphfeat::WindowConfig& w) {
    const auto t = collab::infer_tier(qe.feature_names, w);
    if (!t) fail(Errc::InvalidModel, "model feature names match no tier");
    return *t;
}

net::Endpoint server_arg(const std::string& flag) {
    if (!flag.empty()) return net::parse_endpoint(flag);
    if (const char* env = std::getenv("PPAML_SERVER")) return net::parse_endpoint(env);
    fail(Errc::InvalidConfig, "no server given (--server or PPAML_SERVER)");
}

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

// ---------------------------------------------------------------------------

void cmd_gen(const Globals& g, const std::string& out) {
    auto cfg = g.config();
    cfg.dataset_path.clear();
    auto ds = data::generate_synthetic(cfg.synthetic);
    if (cfg.sample_groups) ds = data::sample_pattern_groups(ds, *cfg.sample_groups, cfg.seed, cfg.stratified_groups);
    if (cfg.balance_ratio) ds = data::undersample_balanced(ds, *cfg.balance_ratio, cfg.seed);
    const auto tx_path = g.out(out, "transactions.csv");
    auto tx = open_out(tx_path);
    data::write_transactions(tx, ds);
    auto groups = open_out(fs::path(tx_path).replace_extension(".groups.csv"));
    data::write_groups(groups, ds.groups());
    std::cout << "wrote " << ds.size() << " transactions (" << ds.groups().size() << " groups, illicit ratio "
              << ds.illicit_ratio() << ") to " << tx_path.string() << "\n";
}

void cmd_enrich(const Globals& g, const std::string& in_path, const std::string& tier_name, const std::string& out) {
    const auto cfg = g.config();
    auto in = open_in(in_path);
    const auto ds = data::parse_transactions(in);
    const auto tier = tier_arg(tier_name);
    const auto rows = graphfeat::enrich_dataset(ds, cfg.window);
    const auto path = g.out(out, "features.csv");
    auto f = open_out(path);
    graphfeat::write_features(f, graphfeat::make_table(rows, tier, cfg.window));
    auto m = open_out(fs::path(path).replace_extension(".manifest"));
    graphfeat::write_manifest(m, cfg.window);
    std::cout << "wrote " << rows.size() << " rows at tier " << graphfeat::to_string(tier) << " to " << path.string()
              << "\n";
}

void write_subset(const graphfeat::FeatureTable& t, const data::Dataset& part, const fs::path& path) {
    std::unordered_set<std::uint64_t> ids;
    for (const auto& tx : part.transactions()) ids.insert(tx.tx_id);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        if (ids.count(t.tx_ids[i])) idx.push_back(i);
    }
    auto out = open_out(path);
    graphfeat::write_features(out, t.select_rows(idx));
}

void cmd_split(const Globals& g, const std::string& tx_path, const std::string& features_path,
               std::optional<double> fraction) {
    const auto cfg = g.config();
    auto in = open_in(tx_path);
    const auto ds = data::parse_transactions(in);
    const auto s = data::temporal_split(ds, fraction.value_or(cfg.train_fraction));
    auto train = open_out(g.out("", "train.csv"));
    data::write_transactions(train, s.train);
    auto test = open_out(g.out("", "test.csv"));
    data::write_transactions(test, s.test);
    if (!features_path.empty()) {
        const auto t = read_table(features_path);
        write_subset(t, s.train, g.out("", "train.features.csv"));
        write_subset(t, s.test, g.out("", "test.features.csv"));
    }
    std::cout << "split day " << s.split_day << ": " << s.train.size() << " train, " << s.test.size()
              << " test (train fraction " << s.achieved_train_fraction << ")\n";
}

graphfeat::FeatureTable table_at(const fs::path& p, const std::string& tier_name, const graphfeat::WindowConfig& w) {
    auto t = read_table(p);
    if (!tier_name.empty()) t = t.restrict_to(tier_arg(tier_name), w);
    return t;
}

void cmd_tune(const Globals& g, const std::string& train_path, const std::string& tier, const std::string& objective,
              const std::string& out) {
    auto cfg = g.config();
    if (!objective.empty()) {
        cfg = experiment::experiment_config_from({{"objective", objective}}, cfg);
    }
    const auto t = table_at(train_path, tier, cfg.window);
    if (cfg.optimize.history_path.empty()) cfg.optimize.history_path = g.out("", "history.jsonl").string();
    const auto res = hpo::optimize(t.features, t.labels, cfg.space, cfg.cv, cfg.optimize);
    nlohmann::json j;
    j["params"] = hpo::to_json(res.best);
    j["score"] = res.best_score;
    j["trial"] = res.best_index;
    const auto path = g.out(out, "params.json");
    open_out(path) << j.dump(2) << "\n";
    std::cout << "best trial " << res.best_index << " score " << res.best_score << " -> " << path.string() << "\n";
}

void cmd_train(const Globals& g, const std::string& train_path, const std::string& tier,
               const std::string& params_path, const std::string& out) {
    const auto cfg = g.config();
    const auto t = table_at(train_path, tier, cfg.window);
    auto tc = cfg.train;
    if (!params_path.empty()) {
        const auto j = nlohmann::json::parse(slurp(params_path));
        const auto p = hpo::params_from_json(j.contains("params") ? j.at("params") : j);
        tc.n_estimators = p.n_estimators;
        tc.max_depth = p.max_depth;
        tc.learning_rate = p.learning_rate;
        tc.colsample_bytree = p.colsample_bytree;
    }
    auto e = gbt::train(t.features, t.labels, tc);
    e.feature_names = t.columns;
    const auto path = g.out(out, "model.json");
    open_out(path) << gbt::serialize(e);
    std::cout << "trained " << e.trees.size() << " trees on " << t.rows() << " rows -> " << path.string() << "\n";
}

void cmd_quantize(const Globals& g, const std::string& model_path, const std::string& calib_path,
                  std::optional<int> bits, const std::string& out) {
    const auto cfg = g.config();
    quant::QuantizedModel m;
    m.source = gbt::deserialize(slurp(model_path));
    auto t = read_table(calib_path);
    if (t.columns != m.source.feature_names) {
        const auto tier = collab::infer_tier(m.source.feature_names, cfg.window);
        if (!tier) fail(Errc::InvalidModel, "model feature names match no tier");
        t = t.restrict_to(*tier, cfg.window);
    }
    m.quantized = quant::quantize_ensemble(m.source, quant::calibrate(t.features, bits.value_or(cfg.n_bits)),
                                           cfg.accumulator_bits);
    m.quantized.feature_names = m.source.feature_names;
    const auto path = g.out(out, "model.quant.json");
    open_out(path) << quant::serialize(m);
    std::cout << "quantized to " << m.quantized.n_bits() << " bits, accumulator " << m.quantized.accumulator_bits
              << " bits -> " << path.string() << "\n";
}

void write_reports(const Globals& g, const std::vector<experiment::MetricsReport>& reports, const std::string& out) {
    const auto path = g.out(out, "report.json");
    open_out(path) << experiment::render_report(reports, experiment::ReportFormat::Json);
    std::cout << experiment::render_report(reports, experiment::ReportFormat::Text);
}

void cmd_eval(const Globals& g, const std::string& model_path, const std::string& test_path,
              const std::string& modes, const std::string& out) {
    auto cfg = g.config();
    if (!modes.empty()) cfg = experiment::experiment_config_from({{"modes", modes}}, cfg);
    const auto m = quant::deserialize_quantized(slurp(model_path));
    const auto tier = model_tier(m.quantized, cfg.window);
    const auto t = read_table(test_path).restrict_to(tier, cfg.window);
    const auto outcome = experiment::evaluate_model(m, t.features, t.labels, tier, cfg.eval);
    write_reports(g, outcome.reports, out);
}

void cmd_report(const std::string& in_path, const std::string& format, const std::string& out) {
    const auto fmt = experiment::parse_report_format(format);
    if (!fmt) fail(Errc::InvalidConfig, "unknown format '" + format + "'");
    std::vector<experiment::MetricsReport> reports;
    if (fs::path(in_path).extension() == ".csv") {
        auto in = open_in(in_path);
        reports = experiment::report_from_csv(in);
    } else {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(slurp(in_path));
        } catch (const nlohmann::json::exception& e) {
            fail(Errc::MalformedRow, std::string("report: ") + e.what());
        }
        reports = experiment::report_from_json(j);
    }
    const auto doc = experiment::render_report(reports, *fmt);
    if (out.empty()) std::cout << doc;
    else open_out(out) << doc;
}

void cmd_experiment(const Globals& g) {
    const auto cfg = g.config();
    const auto res = experiment::run_experiment(cfg);
    for (const auto& run : res.runs) {
        open_out(g.out("", "models/" + std::string(graphfeat::to_string(run.tier)) + ".json"))
            << quant::serialize(run.model);
    }
    open_out(g.out("", "report.csv")) << experiment::render_report(res.reports, experiment::ReportFormat::Csv);
    open_out(g.out("", "report.txt")) << experiment::render_report(res.reports, experiment::ReportFormat::Text);
    std::cout << res.dataset_rows << " transactions, illicit ratio " << res.illicit_ratio << ", split day "
              << res.split_day << "\n";
    write_reports(g, res.reports, "");
}

void cmd_serve(const Globals& g, const std::string& bind, const std::string& models_dir, double timeout_s) {
    const auto cfg = g.config();
    collab::ServerConfig sc;
    sc.bind = net::parse_endpoint(bind);
    sc.session_timeout = std::chrono::milliseconds(static_cast<long>(timeout_s * 1000));
    collab::Server server(collab::load_model_store(models_dir, cfg.window), sc);
    server.start();
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << server.endpoint().to_string() << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
}

collab::LocalData local_data(const fs::path& data_path, const fs::path& model_path, const std::string& tier_name,
                             const graphfeat::WindowConfig& w) {
    const auto m = quant::deserialize_quantized(slurp(model_path));
    auto t = read_table(data_path);
    if (!tier_name.empty()) t = t.restrict_to(tier_arg(tier_name), w);
    return {t.tier, quant::quantize_rows(t.features, m.quantized.params)};
}

std::uint64_t key_seed(const Globals& g) {
    if (g.seed) return *g.seed;
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Privacy-preserving AML pipeline: data, features, boosting, encrypted inference, collaboration"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "seed for every seeded stage");
    app.add_option("--config", g.config_path, "flat key = value configuration file");
    app.add_option("--out-dir", g.out_dir, "directory for outputs")->capture_default_str();

    std::string in, out, tier, features, params, model, calib, modes, format = "text", objective;
    std::optional<double> fraction;
    std::optional<int> bits;

    auto* gen = app.add_subcommand("gen", "generate a synthetic transaction dataset");
    gen->add_option("--out", out, "transactions CSV (default <out-dir>/transactions.csv)");

    auto* enrich = app.add_subcommand("enrich", "compute graph features");
    enrich->add_option("--in", in, "transactions CSV")->required();
    enrich->add_option("--tier", tier, "feature tier")->default_val("vertex_stats");
    enrich->add_option("--out", out, "features CSV");

    auto* split = app.add_subcommand("split", "temporal train/test split at a day boundary");
    split->add_option("--in", in, "transactions CSV")->required();
    split->add_option("--features", features, "features CSV to split alongside");
    split->add_option("--train-fraction", fraction, "share of transactions in train");

    auto* tune = app.add_subcommand("tune", "Bayesian optimization of booster settings");
    tune->add_option("--train", in, "train features CSV")->required();
    tune->add_option("--tier", tier, "restrict to a tier");
    tune->add_option("--objective", objective, "f1 or accuracy");
    tune->add_option("--out", out, "params JSON");

    auto* train = app.add_subcommand("train", "train a boosted tree ensemble");
    train->add_option("--train", in, "train features CSV")->required();
    train->add_option("--tier", tier, "restrict to a tier");
    train->add_option("--params", params, "params JSON from tune");
    train->add_option("--out", out, "model JSON");

    auto* quantize = app.add_subcommand("quantize", "lower a model to integers");
    quantize->add_option("--model", model, "model JSON")->required();
    quantize->add_option("--calib", calib, "calibration features CSV (usually train)")->required();
    quantize->add_option("--bits", bits, "n_bits");
    quantize->add_option("--out", out, "quantized model JSON");

    auto* eval = app.add_subcommand("eval", "evaluate a quantized model in clear, quant and fhe-sim modes");
    eval->add_option("--model", model, "quantized model JSON")->required();
    eval->add_option("--test", in, "test features CSV")->required();
    eval->add_option("--modes", modes, "comma list of clear, quant, fhe-sim");
    eval->add_option("--out", out, "report JSON");

    auto* report = app.add_subcommand("report", "render a report");
    report->add_option("--in", in, "report JSON or CSV")->required();
    report->add_option("--format", format, "text, csv or json")->capture_default_str();
    report->add_option("--out", out, "output file (default stdout)");

    auto* experiment_cmd = app.add_subcommand("experiment", "run the full pipeline from --config");
    auto* keys_cmd = app.add_subcommand("config-keys", "list the recognised configuration keys");

    std::string bind = "127.0.0.1:7070", models_dir, server, session, institution;
    double session_timeout = 10.0;
    auto* serve = app.add_subcommand("serve", "run the aggregation server");
    serve->add_option("--bind", bind, "host:port")->capture_default_str();
    serve->add_option("--models-dir", models_dir, "directory of quantized model JSON files")->required();
    serve->add_option("--session-timeout", session_timeout, "seconds to wait for participants")->capture_default_str();

    auto* participate = app.add_subcommand("participate", "submit encrypted rows to a session");
    participate->add_option("--server", server, "host:port (default $PPAML_SERVER)");
    participate->add_option("--session", session, "model id or session hex to accept");
    participate->add_option("--data", in, "local features CSV")->required();
    participate->add_option("--model", model, "quantized model JSON with the shared quantization")->required();
    participate->add_option("--tier", tier, "restrict local data to a tier");
    participate->add_option("--institution", institution, "institution id")->default_val("participant");

    std::string remote_model;
    auto* inquire = app.add_subcommand("inquire", "open a session and decrypt the results");
    inquire->add_option("--server", server, "host:port (default $PPAML_SERVER)");
    inquire->add_option("--model", remote_model, "model id on the server")->required();
    inquire->add_option("--tier", tier, "feature tier of the model")->required();
    inquire->add_option("--data", in, "own features CSV to include");
    inquire->add_option("--local-model", model, "quantized model JSON for own rows");
    inquire->add_option("--institution", institution, "institution id")->default_val("inquiry");
    inquire->add_option("--out", out, "predictions CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (gen->parsed()) cmd_gen(g, out);
        else if (enrich->parsed()) cmd_enrich(g, in, tier, out);
        else if (split->parsed()) cmd_split(g, in, features, fraction);
        else if (tune->parsed()) cmd_tune(g, in, tier, objective, out);
        else if (train->parsed()) cmd_train(g, in, tier, params, out);
        else if (quantize->parsed()) cmd_quantize(g, model, calib, bits, out);
        else if (eval->parsed()) cmd_eval(g, model, in, modes, out);
        else if (report->parsed()) cmd_report(in, format, out);
        else if (experiment_cmd->parsed()) cmd_experiment(g);
        else if (keys_cmd->parsed()) {
            for (const auto& [k, h] : experiment::config_keys()) std::cout << k << "\t" << h << "\n";
        }
        else if (serve->parsed()) cmd_serve(g, bind, models_dir, session_timeout);
        else if (participate->parsed()) {
            const auto cfg = g.config();
            collab::ParticipateConfig pc;
            pc.institution_id = institution;
            pc.session_filter = session;
            pc.on_registered = [&](std::uint32_t position) {
                std::cout << "registered as " << institution << " at position " << position << std::endl;
            };
            const auto r = collab::participate(server_arg(server), local_data(in, model, tier, cfg.window), pc);
            std::cout << "session " << wire::to_hex(r.session) << " model " << r.model_id << ": " << r.rows
                      << " rows in " << r.batches << " batches\n";
        } else if (inquire->parsed()) {
            const auto cfg = g.config();
            const auto keys = fhe::keygen(key_seed(g));
            std::optional<collab::LocalData> own;
            if (!in.empty()) {
                if (model.empty()) fail(Errc::InvalidConfig, "--data needs --local-model");
                own = local_data(in, model, tier, cfg.window);
            }
            collab::InquireConfig ic;
            ic.institution_id = institution;
            ic.threshold = cfg.eval.threshold;
            const auto res = collab::inquire(server_arg(server), remote_model, tier_arg(tier), keys,
                                             own ? &*own : nullptr, ic);
            std::ostringstream csv;
            csv << "institution,row,score,margin,probability,label\n";
            for (const auto& p : res.predictions) {
                csv << p.institution_id << ',' << p.row_index << ',' << p.score << ','
                    << graphfeat::format_double(p.margin) << ',' << graphfeat::format_double(p.probability) << ','
                    << (p.label ? 1 : 0) << '\n';
            }
            if (out.empty()) std::cout << csv.str();
            else open_out(out) << csv.str();
            std::cerr << "session " << wire::to_hex(res.session) << ": " << res.predictions.size() << " predictions\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kPipelineError;
    }
    return kOk;
}
