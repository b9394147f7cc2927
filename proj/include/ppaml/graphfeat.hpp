#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ppaml/data.hpp"
#include "ppaml/matrix.hpp"

namespace ppaml::graphfeat {

using Vertex = std::uint32_t;

struct WindowConfig {
    std::int64_t window_seconds = 86400;
    std::size_t max_cycle_length = 6;
    /// Lower bounds of the histogram bins; the last bin is open-ended and the
    /// first bound is the smallest pattern size that is counted at all.
    std::vector<std::size_t> histogram_bins{2, 3, 4, 5};
    /// Attach src-inbound and dst-outbound statistics too (12 columns, not 6).
    bool both_direction_stats = false;

    void validate() const;
};

/// One directed money transfer inside the window.
struct Edge {
    Vertex src = 0;
    Vertex dst = 0;
    std::int64_t timestamp = 0;
    std::int64_t amount = 0;
    std::uint64_t tx_id = 0;
};

using Histogram = std::vector<std::uint64_t>;

/// Adds one pattern of `size` to `hist`; sizes below the first bound are ignored.
void histogram_add(Histogram& hist, std::span<const std::size_t> bins, std::size_t size, std::uint64_t count = 1);

struct SingleHop {
    std::uint64_t fan_in = 0;
    std::uint64_t fan_out = 0;
    std::uint64_t degree_in = 0;
    std::uint64_t degree_out = 0;
    friend bool operator==(const SingleHop&, const SingleHop&) = default;
};

struct MultiHop {
    Histogram scatter_gather;
    Histogram simple_cycle;
    Histogram temporal_cycle;
    friend bool operator==(const MultiHop&, const MultiHop&) = default;
};

struct MomentStats {
    double sum = 0.0;
    double variance = 0.0; ///< population variance
    double skewness = 0.0; ///< Fisher-Pearson, 0 when n < 3 or variance is 0
    friend bool operator==(const MomentStats&, const MomentStats&) = default;
};

/// Exact running power sums of a multiset of non-negative integer amounts.
struct MomentAggregate {
    std::uint64_t count = 0;
    __int128 s1 = 0;
    __int128 s2 = 0;
    __int128 s3 = 0;

    void add(std::int64_t amount);
    void remove(std::int64_t amount);
    MomentStats stats() const;
    friend bool operator==(const MomentAggregate&, const MomentAggregate&) = default;
};

MomentStats moment_stats(std::span<const std::int64_t> amounts);

struct VertexStats {
    MomentStats src_out;
    MomentStats dst_in;
    MomentStats src_in;  ///< only with both_direction_stats
    MomentStats dst_out; ///< only with both_direction_stats
    friend bool operator==(const VertexStats&, const VertexStats&) = default;
};

/// Everything derived from the window graph for one edge.
struct GraphFeatures {
    SingleHop single_hop;
    MultiHop multi_hop;
    VertexStats vertex_stats;
    friend bool operator==(const GraphFeatures&, const GraphFeatures&) = default;
};

enum class Direction { Inbound, Outbound };

/// Sliding-window transaction multigraph. Edges must arrive in
/// non-decreasing timestamp order; each insert evicts edges older than
/// `timestamp - window_seconds` first.
class DynamicGraph {
public:
    explicit DynamicGraph(WindowConfig cfg = {});

    const WindowConfig& config() const noexcept { return cfg_; }

    /// Evicts stale edges, then inserts `edge`.
    void insert(const Edge& edge);

    std::size_t edge_count() const noexcept { return edges_.size(); }
    const std::deque<Edge>& edges() const noexcept { return edges_; }
    std::optional<std::int64_t> latest_timestamp() const noexcept { return latest_; }

    SingleHop single_hop(const Edge& edge) const;
    Histogram scatter_gather_hist(const Edge& edge) const;
    Histogram simple_cycle_hist(const Edge& edge) const;
    /// Requires `edge` to carry the newest timestamp in the window.
    Histogram temporal_cycle_hist(const Edge& edge) const;
    MomentStats vertex_stats(Vertex v, Direction dir) const;
    const MomentAggregate& aggregate(Vertex v, Direction dir) const;

    GraphFeatures features(const Edge& edge) const;

private:
    using Timestamps = std::vector<std::int64_t>; // ascending
    using Adjacency = std::map<Vertex, Timestamps>;

    struct VertexState {
        Adjacency out;
        Adjacency in;
        MomentAggregate out_agg;
        MomentAggregate in_agg;
    };

    void evict_before(std::int64_t cutoff);
    const VertexState* state(Vertex v) const;

    WindowConfig cfg_;
    std::deque<Edge> edges_;
    std::vector<VertexState> vertices_;
    std::optional<std::int64_t> latest_;
};

/// Exhaustive recomputation of `edge`'s graph features from a raw window
/// multiset, with no incremental state. Intended for small windows in tests.
GraphFeatures oracle_features(std::span<const Edge> window, const Edge& edge, const WindowConfig& cfg);

// ---------------------------------------------------------------------------
// Feature rows

enum class Tier : std::uint8_t { Basic, SingleHop, MultiHop, VertexStats };
inline constexpr std::size_t kTierCount = 4;

std::string_view to_string(Tier tier) noexcept;
std::optional<Tier> parse_tier(std::string_view text) noexcept;

struct BaseFeatures {
    double timestamp = 0;
    double from_bank = 0;
    double to_bank = 0;
    double amount = 0; ///< major currency units
    double currency = 0;
    double payment_format = 0;
    friend bool operator==(const BaseFeatures&, const BaseFeatures&) = default;
};

struct EnrichedRow {
    std::uint64_t tx_id = 0;
    bool is_illicit = false;
    BaseFeatures base;
    GraphFeatures graph;
    Tier tier = Tier::VertexStats;

    /// Feature values for `tier`, in `column_names(tier, cfg)` order.
    std::vector<double> values(Tier tier, const WindowConfig& cfg) const;
    friend bool operator==(const EnrichedRow&, const EnrichedRow&) = default;
};

/// Column names of a tier; each tier extends the previous one.
std::vector<std::string> column_names(Tier tier, const WindowConfig& cfg);

/// Streams transactions through a DynamicGraph, encoding the basic features
/// (bank and currency ordinals are assigned deterministically).
class Enricher {
public:
    explicit Enricher(WindowConfig cfg = {});

    EnrichedRow enrich(const data::Transaction& tx);

    const DynamicGraph& graph() const noexcept { return graph_; }
    std::optional<Vertex> vertex_of(const data::AccountId& account) const;

private:
    Vertex intern(const data::AccountId& account);
    double bank_code(const std::string& bank);
    double currency_code(const std::string& currency);

    DynamicGraph graph_;
    std::unordered_map<data::AccountId, Vertex, data::AccountIdHash> vertex_ids_;
    std::map<std::string, double> bank_codes_;
    std::map<std::string, double> currency_codes_;
};

std::vector<EnrichedRow> enrich_dataset(const data::Dataset& ds, const WindowConfig& cfg = {});

/// Feature matrix with identifying columns, as exchanged through files.
struct FeatureTable {
    Tier tier = Tier::Basic;
    std::vector<std::string> columns;
    std::vector<std::uint64_t> tx_ids;
    std::vector<bool> labels;
    FeatureMatrix features;

    std::size_t rows() const noexcept { return features.rows(); }
    /// Index of a named column, if present.
    std::optional<std::size_t> column(std::string_view name) const;
    FeatureTable select_rows(std::span<const std::size_t> idx) const;
    /// Leading columns of a smaller tier.
    FeatureTable restrict_to(Tier tier, const WindowConfig& cfg) const;
};

FeatureTable make_table(std::span<const EnrichedRow> rows, Tier tier, const WindowConfig& cfg);

/// CSV: `tx_id,is_laundering,<columns...>` with shortest round-trip doubles.
void write_features(std::ostream& out, const FeatureTable& table);
FeatureTable read_features(std::istream& in);

/// One line per tier, `tier: col,col,...`.
void write_manifest(std::ostream& out, const WindowConfig& cfg);
std::map<Tier, std::vector<std::string>> read_manifest(std::istream& in);

std::string format_double(double v);

} // namespace ppaml::graphfeat
