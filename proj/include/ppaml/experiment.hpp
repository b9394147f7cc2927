#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ppaml/data.hpp"
#include "ppaml/gbt.hpp"
#include "ppaml/graphfeat.hpp"
#include "ppaml/hpo.hpp"
#include "ppaml/metrics.hpp"
#include "ppaml/quant.hpp"

namespace ppaml::experiment {

enum class Mode : std::uint8_t { Clear, Quant, FheSim };

std::string_view to_string(Mode mode) noexcept;
std::optional<Mode> parse_mode(std::string_view text) noexcept;

/// One (tier, mode) row of a results table.
struct MetricsReport {
    graphfeat::Tier tier = graphfeat::Tier::Basic;
    Mode mode = Mode::Clear;
    Confusion confusion;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0; ///< illicit class
    std::size_t batches = 0;
    double avg_batch_time = 0.0; ///< seconds
    double total_time = 0.0;     ///< seconds
    double time_ratio = 0.0;     ///< total_time over the clear model's total_time
    std::uint64_t lut_ops = 0;
    std::uint64_t add_ops = 0;
};

/// Confusion counts and the derived metrics; timing fields stay zero.
/// Throws LengthMismatch on unequal or empty inputs.
MetricsReport compute_metrics(const std::vector<bool>& labels, const std::vector<bool>& predictions);

struct EvalConfig {
    std::vector<Mode> modes{Mode::Clear};
    double threshold = 0.5;
    std::size_t timing_batches = 20;
    std::uint64_t key_seed = 0;
    void validate() const;
};

struct EvalOutcome {
    std::vector<MetricsReport> reports;           ///< in `modes` order
    std::map<Mode, std::vector<bool>> predictions; ///< per requested mode
};

/// Scores `x` with the float model (clear), the integer model (quant) and
/// the integer model under encryption (fhe-sim). The clear model is always
/// timed as the time_ratio baseline. When both quant and fhe-sim run, their
/// per-row predictions must agree or PipelineError is thrown.
EvalOutcome evaluate_model(const quant::QuantizedModel& model, const FeatureMatrix& x, const std::vector<bool>& y,
                           graphfeat::Tier tier, const EvalConfig& cfg);

struct ExperimentConfig {
    std::string dataset_path; ///< transactions CSV; empty generates `synthetic`
    std::string groups_path;  ///< optional sidecar for `dataset_path`
    data::SyntheticConfig synthetic = default_synthetic();
    std::optional<std::size_t> sample_groups; ///< keep k pattern groups
    bool stratified_groups = false;
    std::optional<double> balance_ratio;      ///< undersample licit rows to this illicit ratio

    std::vector<graphfeat::Tier> tiers{graphfeat::Tier::Basic};
    graphfeat::WindowConfig window;
    double train_fraction = 0.8;

    gbt::TrainConfig train;
    bool tune = false;
    hpo::SearchSpace space;
    hpo::CvConfig cv;
    hpo::OptimizeConfig optimize;

    int n_bits = quant::kDefaultBits;
    int accumulator_bits = quant::kDefaultAccumulatorBits;
    EvalConfig eval;

    std::uint64_t seed = 0;
    std::size_t threads = 1; ///< tiers evaluated in parallel

    /// Applies `seed` to every seeded stage.
    void apply_seed(std::uint64_t s);
    void validate() const;

    static data::SyntheticConfig default_synthetic();
};

struct TierRun {
    graphfeat::Tier tier = graphfeat::Tier::Basic;
    hpo::Params params;
    std::optional<hpo::OptimizeResult> tuning;
    quant::QuantizedModel model;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
};

struct ExperimentResult {
    std::vector<MetricsReport> reports; ///< tier-major, modes in configured order
    std::vector<TierRun> runs;          ///< one per tier
    std::int64_t split_day = 0;
    std::size_t dataset_rows = 0;
    double illicit_ratio = 0.0;
};

/// Raised for a failure inside run_experiment; keeps the original code.
class StageError : public Error {
public:
    StageError(const std::string& stage, const Error& cause);
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Tables for a dataset already enriched and split.
struct PreparedData {
    data::Dataset dataset;
    std::vector<graphfeat::EnrichedRow> train;
    std::vector<graphfeat::EnrichedRow> test;
    std::int64_t split_day = 0;
};

/// load or generate, sample, balance, enrich, split.
PreparedData prepare_data(const ExperimentConfig& cfg);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { Text, Csv, Json };

std::optional<ReportFormat> parse_report_format(std::string_view text) noexcept;

/// Column order of every rendering.
const std::vector<std::string>& report_columns();

std::string render_report(const std::vector<MetricsReport>& reports, ReportFormat format);

nlohmann::ordered_json report_to_json(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> report_from_json(const nlohmann::json& j);
/// Parses the CSV rendering. Only the table columns are recovered.
std::vector<MetricsReport> report_from_csv(std::istream& in);

// ---------------------------------------------------------------------------
// Flat key = value configuration

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment. Duplicate keys and lines
/// without `=` are InvalidConfig.
KeyValues read_key_values(std::istream& in);

/// Applies recognised keys onto `base`. Unknown keys are InvalidConfig.
ExperimentConfig experiment_config_from(const KeyValues& kv, ExperimentConfig base = {});

/// Every recognised key with a one-line description.
const std::vector<std::pair<std::string, std::string>>& config_keys();

} // namespace ppaml::experiment
