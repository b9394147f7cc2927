#include "ppaml/graphfeat.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include "ppaml/csv.hpp"

namespace ppaml::graphfeat {

void WindowConfig::validate() const {
    if (window_seconds <= 0) fail(Errc::InvalidConfig, "window_seconds must be positive");
    if (max_cycle_length < 2) fail(Errc::InvalidConfig, "max_cycle_length must be at least 2");
    if (histogram_bins.empty()) fail(Errc::InvalidConfig, "histogram_bins must not be empty");
    if (histogram_bins.front() < 1) fail(Errc::InvalidConfig, "histogram bins start at size 1 or more");
    for (std::size_t i = 1; i < histogram_bins.size(); ++i) {
        if (histogram_bins[i] <= histogram_bins[i - 1]) fail(Errc::InvalidConfig, "histogram_bins must be strictly ascending");
    }
}

void histogram_add(Histogram& hist, std::span<const std::size_t> bins, std::size_t size, std::uint64_t count) {
    if (count == 0 || size < bins.front()) return;
    const auto it = std::upper_bound(bins.begin(), bins.end(), size);
    hist[static_cast<std::size_t>(it - bins.begin()) - 1] += count;
}

// ---------------------------------------------------------------------------
// Moments

namespace {

bool mul_ok(__int128 a, __int128 b, __int128& out) { return !__builtin_mul_overflow(a, b, &out); }
bool add_ok(__int128 a, __int128 b, __int128& out) { return !__builtin_add_overflow(a, b, &out); }

// n^2 S3 - 3 n S1 S2 + 2 S1^3, or nullopt on overflow.
std::optional<__int128> third_central_numerator(__int128 n, __int128 s1, __int128 s2, __int128 s3) {
    __int128 a, b, c, t;
    if (!mul_ok(n, n, t) || !mul_ok(t, s3, a)) return std::nullopt;
    if (!mul_ok(3 * n, s1, t) || !mul_ok(t, s2, b)) return std::nullopt;
    if (!mul_ok(s1, s1, t) || !mul_ok(t, s1, c) || !mul_ok(c, 2, c)) return std::nullopt;
    __int128 r;
    if (!add_ok(a, -b, r) || !add_ok(r, c, r)) return std::nullopt;
    return r;
}

} // namespace

void MomentAggregate::add(std::int64_t amount) {
    const __int128 x = amount;
    ++count;
    s1 += x;
    s2 += x * x;
    s3 += x * x * x;
}

void MomentAggregate::remove(std::int64_t amount) {
    const __int128 x = amount;
    --count;
    s1 -= x;
    s2 -= x * x;
    s3 -= x * x * x;
}

MomentStats MomentAggregate::stats() const {
    MomentStats out;
    if (count == 0) return out;
    const __int128 n = count;
    out.sum = static_cast<double>(s1);

    // n^2 * variance = n S2 - S1^2, exact when it fits in 128 bits.
    __int128 ns2, s1sq, d2 = 0;
    long double d2f;
    const bool exact = mul_ok(n, s2, ns2) && mul_ok(s1, s1, s1sq) && add_ok(ns2, -s1sq, d2);
    if (exact) {
        d2f = static_cast<long double>(d2);
    } else {
        const long double mean = static_cast<long double>(s1) / count;
        d2f = (static_cast<long double>(s2) / count - mean * mean) * count * count;
    }
    if (d2f < 0) d2f = 0;
    out.variance = static_cast<double>(d2f / (static_cast<long double>(count) * count));
    if (count < 3 || d2f == 0) return out;

    long double d3f;
    if (auto d3 = exact ? third_central_numerator(n, s1, s2, s3) : std::nullopt) {
        d3f = static_cast<long double>(*d3);
    } else {
        const long double c = count;
        const long double m = static_cast<long double>(s1) / c;
        const long double m3 = static_cast<long double>(s3) / c - 3 * m * static_cast<long double>(s2) / c + 2 * m * m * m;
        d3f = m3 * c * c * c;
    }
    // skew = (D3 / n^3) / (D2 / n^2)^{3/2} = D3 / D2^{3/2}
    out.skewness = static_cast<double>(d3f / (d2f * std::sqrt(d2f)));
    return out;
}

MomentStats moment_stats(std::span<const std::int64_t> amounts) {
    MomentAggregate agg;
    for (auto a : amounts) agg.add(a);
    return agg.stats();
}

// ---------------------------------------------------------------------------
// DynamicGraph

DynamicGraph::DynamicGraph(WindowConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

const DynamicGraph::VertexState* DynamicGraph::state(Vertex v) const {
    return v < vertices_.size() ? &vertices_[v] : nullptr;
}

void DynamicGraph::evict_before(std::int64_t cutoff) {
    while (!edges_.empty() && edges_.front().timestamp < cutoff) {
        const Edge& e = edges_.front();
        auto& src = vertices_[e.src];
        auto& dst = vertices_[e.dst];
        auto out_it = src.out.find(e.dst);
        out_it->second.erase(out_it->second.begin());
        if (out_it->second.empty()) src.out.erase(out_it);
        auto in_it = dst.in.find(e.src);
        in_it->second.erase(in_it->second.begin());
        if (in_it->second.empty()) dst.in.erase(in_it);
        src.out_agg.remove(e.amount);
        dst.in_agg.remove(e.amount);
        edges_.pop_front();
    }
}

void DynamicGraph::insert(const Edge& edge) {
    if (latest_ && edge.timestamp < *latest_) {
        fail(Errc::OutOfOrderEdge, "edge at " + std::to_string(edge.timestamp) + " after " + std::to_string(*latest_));
    }
    if (edge.amount < 0) fail(Errc::InvalidConfig, "negative amount");
    latest_ = edge.timestamp;
    evict_before(edge.timestamp - cfg_.window_seconds);
    const Vertex top = std::max(edge.src, edge.dst);
    if (top >= vertices_.size()) vertices_.resize(static_cast<std::size_t>(top) + 1);
    vertices_[edge.src].out[edge.dst].push_back(edge.timestamp);
    vertices_[edge.dst].in[edge.src].push_back(edge.timestamp);
    vertices_[edge.src].out_agg.add(edge.amount);
    vertices_[edge.dst].in_agg.add(edge.amount);
    edges_.push_back(edge);
}

SingleHop DynamicGraph::single_hop(const Edge& edge) const {
    SingleHop out;
    if (const auto* d = state(edge.dst)) {
        out.fan_in = d->in.size();
        out.degree_in = d->in_agg.count;
    }
    if (const auto* s = state(edge.src)) {
        out.fan_out = s->out.size();
        out.degree_out = s->out_agg.count;
    }
    return out;
}

namespace {

// |keys(a) ∩ keys(b)| excluding two vertices.
template <class MapA, class MapB>
std::size_t intersect_count(const MapA& a, const MapB& b, Vertex skip1, Vertex skip2) {
    std::size_t n = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (ia->first < ib->first) {
            ++ia;
        } else if (ib->first < ia->first) {
            ++ib;
        } else {
            if (ia->first != skip1 && ia->first != skip2) ++n;
            ++ia;
            ++ib;
        }
    }
    return n;
}

} // namespace

Histogram DynamicGraph::scatter_gather_hist(const Edge& edge) const {
    const auto& bins = cfg_.histogram_bins;
    Histogram hist(bins.size(), 0);
    const Vertex u = edge.src, v = edge.dst;
    if (u == v) return hist;
    const auto* su = state(u);
    const auto* sv = state(v);
    if (!su || !sv) return hist;

    // edge as a scatter edge a=u -> m=v; every gather target b of v.
    for (const auto& [b, ts] : sv->out) {
        if (b == u || b == v) continue;
        const auto* sb = state(b);
        histogram_add(hist, bins, intersect_count(su->out, sb->in, u, b));
    }
    // edge as a gather edge m=u -> b=v; every scatter source a of u.
    for (const auto& [a, ts] : su->in) {
        if (a == u || a == v) continue;
        const auto* sa = state(a);
        histogram_add(hist, bins, intersect_count(sa->out, sv->in, a, v));
    }
    return hist;
}

Histogram DynamicGraph::simple_cycle_hist(const Edge& edge) const {
    const auto& bins = cfg_.histogram_bins;
    Histogram hist(bins.size(), 0);
    const Vertex u = edge.src, v = edge.dst;
    if (u == v || !state(v)) return hist;

    // Paths v -> ... -> u over distinct vertices; `edges` counts path edges.
    std::vector<Vertex> on_path{v};
    auto dfs = [&](auto&& self, Vertex cur, std::size_t edges, std::uint64_t mult) -> void {
        for (const auto& [w, ts] : vertices_[cur].out) {
            const std::uint64_t m = mult * ts.size();
            if (w == u) {
                histogram_add(hist, bins, edges + 2, m);
                continue;
            }
            if (edges + 2 >= cfg_.max_cycle_length) continue;
            if (std::find(on_path.begin(), on_path.end(), w) != on_path.end()) continue;
            on_path.push_back(w);
            self(self, w, edges + 1, m);
            on_path.pop_back();
        }
    };
    dfs(dfs, v, 0, 1);
    return hist;
}

Histogram DynamicGraph::temporal_cycle_hist(const Edge& edge) const {
    const auto& bins = cfg_.histogram_bins;
    Histogram hist(bins.size(), 0);
    const Vertex u = edge.src, v = edge.dst;
    if (u == v || !state(v)) return hist;
    const std::int64_t t_close = edge.timestamp;

    std::vector<Vertex> on_path{v};
    auto dfs = [&](auto&& self, Vertex cur, std::size_t edges, std::int64_t after) -> void {
        for (const auto& [w, ts] : vertices_[cur].out) {
            auto first = std::upper_bound(ts.begin(), ts.end(), after);
            auto last = std::lower_bound(first, ts.end(), t_close);
            if (first == last) continue;
            if (w == u) {
                histogram_add(hist, bins, edges + 2, static_cast<std::uint64_t>(last - first));
                continue;
            }
            if (edges + 2 >= cfg_.max_cycle_length) continue;
            if (std::find(on_path.begin(), on_path.end(), w) != on_path.end()) continue;
            on_path.push_back(w);
            for (auto it = first; it != last; ++it) self(self, w, edges + 1, *it);
            on_path.pop_back();
        }
    };
    dfs(dfs, v, 0, std::numeric_limits<std::int64_t>::min());
    return hist;
}

const MomentAggregate& DynamicGraph::aggregate(Vertex v, Direction dir) const {
    static const MomentAggregate empty;
    const auto* s = state(v);
    if (!s) return empty;
    return dir == Direction::Inbound ? s->in_agg : s->out_agg;
}

MomentStats DynamicGraph::vertex_stats(Vertex v, Direction dir) const { return aggregate(v, dir).stats(); }

GraphFeatures DynamicGraph::features(const Edge& edge) const {
    GraphFeatures f;
    f.single_hop = single_hop(edge);
    f.multi_hop.scatter_gather = scatter_gather_hist(edge);
    f.multi_hop.simple_cycle = simple_cycle_hist(edge);
    f.multi_hop.temporal_cycle = temporal_cycle_hist(edge);
    f.vertex_stats.src_out = vertex_stats(edge.src, Direction::Outbound);
    f.vertex_stats.dst_in = vertex_stats(edge.dst, Direction::Inbound);
    if (cfg_.both_direction_stats) {
        f.vertex_stats.src_in = vertex_stats(edge.src, Direction::Inbound);
        f.vertex_stats.dst_out = vertex_stats(edge.dst, Direction::Outbound);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Oracle

GraphFeatures oracle_features(std::span<const Edge> window, const Edge& edge, const WindowConfig& cfg) {
    const auto& bins = cfg.histogram_bins;
    GraphFeatures f;
    const Vertex u = edge.src, v = edge.dst;

    std::set<Vertex> srcs_into_v, dsts_from_u;
    std::vector<std::int64_t> out_u, in_v, in_u, out_v;
    for (const auto& e : window) {
        if (e.dst == v) {
            srcs_into_v.insert(e.src);
            in_v.push_back(e.amount);
        }
        if (e.src == u) {
            dsts_from_u.insert(e.dst);
            out_u.push_back(e.amount);
        }
        if (e.dst == u) in_u.push_back(e.amount);
        if (e.src == v) out_v.push_back(e.amount);
    }
    f.single_hop = {srcs_into_v.size(), dsts_from_u.size(), in_v.size(), out_u.size()};
    f.vertex_stats.src_out = moment_stats(out_u);
    f.vertex_stats.dst_in = moment_stats(in_v);
    if (cfg.both_direction_stats) {
        f.vertex_stats.src_in = moment_stats(in_u);
        f.vertex_stats.dst_out = moment_stats(out_v);
    }

    std::set<Vertex> vertex_set;
    for (const auto& e : window) {
        vertex_set.insert(e.src);
        vertex_set.insert(e.dst);
    }
    const std::vector<Vertex> vs(vertex_set.begin(), vertex_set.end());
    auto has_edge = [&](Vertex a, Vertex b) {
        return std::any_of(window.begin(), window.end(), [&](const Edge& e) { return e.src == a && e.dst == b; });
    };

    // Scatter-gather: every ordered pair (a, b) and its maximal intermediate set.
    f.multi_hop.scatter_gather.assign(bins.size(), 0);
    for (Vertex a : vs) {
        for (Vertex b : vs) {
            if (a == b) continue;
            std::vector<Vertex> mids;
            for (Vertex m : vs) {
                if (m != a && m != b && has_edge(a, m) && has_edge(m, b)) mids.push_back(m);
            }
            auto in_mids = [&](Vertex x) { return std::find(mids.begin(), mids.end(), x) != mids.end(); };
            const bool participates = (u == a && in_mids(v)) || (v == b && in_mids(u));
            if (participates) histogram_add(f.multi_hop.scatter_gather, bins, mids.size());
        }
    }

    // Cycles: every sequence of distinct intermediates between v and u.
    f.multi_hop.simple_cycle.assign(bins.size(), 0);
    f.multi_hop.temporal_cycle.assign(bins.size(), 0);
    if (u == v) return f;
    std::vector<Vertex> others;
    for (Vertex x : vs) {
        if (x != u && x != v) others.push_back(x);
    }
    auto parallel = [&](Vertex a, Vertex b) {
        std::vector<std::int64_t> ts;
        for (const auto& e : window) {
            if (e.src == a && e.dst == b) ts.push_back(e.timestamp);
        }
        return ts;
    };
    std::vector<Vertex> seq;
    auto score_sequence = [&] {
        // Vertex order: v, seq..., u; then the queried edge u -> v closes it.
        std::vector<Vertex> path{v};
        path.insert(path.end(), seq.begin(), seq.end());
        path.push_back(u);
        std::vector<std::vector<std::int64_t>> hops;
        std::uint64_t mult = 1;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            hops.push_back(parallel(path[i], path[i + 1]));
            mult *= hops.back().size();
        }
        const std::size_t length = path.size();
        histogram_add(f.multi_hop.simple_cycle, bins, length, mult);
        if (mult == 0) return;
        // Cartesian product of parallel-edge choices with a strict time order.
        std::uint64_t temporal = 0;
        std::vector<std::size_t> pick(hops.size(), 0);
        while (true) {
            bool ok = true;
            for (std::size_t i = 0; i < hops.size() && ok; ++i) {
                const auto t = hops[i][pick[i]];
                if (i > 0 && !(hops[i - 1][pick[i - 1]] < t)) ok = false;
                if (!(t < edge.timestamp)) ok = false;
            }
            if (ok) ++temporal;
            std::size_t k = 0;
            while (k < pick.size() && ++pick[k] == hops[k].size()) pick[k++] = 0;
            if (k == pick.size()) break;
        }
        histogram_add(f.multi_hop.temporal_cycle, bins, length, temporal);
    };
    auto extend = [&](auto&& self) -> void {
        score_sequence();
        if (seq.size() + 2 >= cfg.max_cycle_length) return;
        for (Vertex x : others) {
            if (std::find(seq.begin(), seq.end(), x) != seq.end()) continue;
            seq.push_back(x);
            self(self);
            seq.pop_back();
        }
    };
    extend(extend);
    return f;
}

// ---------------------------------------------------------------------------
// Rows and tiers

std::string_view to_string(Tier tier) noexcept {
    switch (tier) {
    case Tier::Basic: return "basic";
    case Tier::SingleHop: return "single_hop";
    case Tier::MultiHop: return "multi_hop";
    case Tier::VertexStats: return "vertex_stats";
    }
    return "basic";
}

std::optional<Tier> parse_tier(std::string_view text) noexcept {
    for (std::size_t i = 0; i < kTierCount; ++i) {
        if (to_string(static_cast<Tier>(i)) == text) return static_cast<Tier>(i);
    }
    return std::nullopt;
}

namespace {

std::vector<std::string> bin_names(std::string_view prefix, const WindowConfig& cfg) {
    std::vector<std::string> out;
    const auto& bins = cfg.histogram_bins;
    for (std::size_t i = 0; i < bins.size(); ++i) {
        const bool open = i + 1 == bins.size();
        const bool exact = !open && bins[i + 1] == bins[i] + 1;
        std::string name = std::string(prefix) + "_" + std::to_string(bins[i]);
        if (open) name += "p";
        else if (!exact) name += "_" + std::to_string(bins[i + 1] - 1);
        out.push_back(std::move(name));
    }
    return out;
}

void append_stats(std::vector<double>& out, const MomentStats& s) {
    out.push_back(s.sum);
    out.push_back(s.variance);
    out.push_back(s.skewness);
}

} // namespace

std::vector<std::string> column_names(Tier tier, const WindowConfig& cfg) {
    std::vector<std::string> cols{"timestamp", "from_bank", "to_bank", "amount", "currency", "payment_format"};
    if (tier >= Tier::SingleHop) {
        for (const char* c : {"fan_in", "fan_out", "degree_in", "degree_out"}) cols.emplace_back(c);
    }
    if (tier >= Tier::MultiHop) {
        for (const char* p : {"sg", "cycle", "tcycle"}) {
            auto names = bin_names(p, cfg);
            cols.insert(cols.end(), names.begin(), names.end());
        }
    }
    if (tier >= Tier::VertexStats) {
        std::vector<std::string> groups{"src_out", "dst_in"};
        if (cfg.both_direction_stats) {
            groups.emplace_back("src_in");
            groups.emplace_back("dst_out");
        }
        for (const auto& g : groups) {
            for (const char* s : {"_sum", "_var", "_skew"}) cols.push_back(g + s);
        }
    }
    return cols;
}

std::vector<double> EnrichedRow::values(Tier t, const WindowConfig& cfg) const {
    std::vector<double> out{base.timestamp, base.from_bank, base.to_bank, base.amount, base.currency, base.payment_format};
    if (t >= Tier::SingleHop) {
        const auto& s = graph.single_hop;
        for (auto v : {s.fan_in, s.fan_out, s.degree_in, s.degree_out}) out.push_back(static_cast<double>(v));
    }
    if (t >= Tier::MultiHop) {
        for (const auto* h : {&graph.multi_hop.scatter_gather, &graph.multi_hop.simple_cycle, &graph.multi_hop.temporal_cycle}) {
            for (auto c : *h) out.push_back(static_cast<double>(c));
        }
    }
    if (t >= Tier::VertexStats) {
        append_stats(out, graph.vertex_stats.src_out);
        append_stats(out, graph.vertex_stats.dst_in);
        if (cfg.both_direction_stats) {
            append_stats(out, graph.vertex_stats.src_in);
            append_stats(out, graph.vertex_stats.dst_out);
        }
    }
    return out;
}

Enricher::Enricher(WindowConfig cfg) : graph_(std::move(cfg)) {}

Vertex Enricher::intern(const data::AccountId& account) {
    auto [it, inserted] = vertex_ids_.try_emplace(account, static_cast<Vertex>(vertex_ids_.size()));
    return it->second;
}

std::optional<Vertex> Enricher::vertex_of(const data::AccountId& account) const {
    auto it = vertex_ids_.find(account);
    if (it == vertex_ids_.end()) return std::nullopt;
    return it->second;
}

double Enricher::bank_code(const std::string& bank) {
    double numeric = 0;
    const auto* end = bank.data() + bank.size();
    if (auto [ptr, ec] = std::from_chars(bank.data(), end, numeric); ec == std::errc{} && ptr == end) return numeric;
    // Non-numeric bank ids get negative ordinals in order of first appearance.
    auto [it, inserted] = bank_codes_.try_emplace(bank, -static_cast<double>(bank_codes_.size() + 1));
    return it->second;
}

double Enricher::currency_code(const std::string& currency) {
    auto [it, inserted] = currency_codes_.try_emplace(currency, static_cast<double>(currency_codes_.size()));
    return it->second;
}

EnrichedRow Enricher::enrich(const data::Transaction& tx) {
    Edge edge{intern(tx.src), intern(tx.dst), tx.timestamp, tx.amount, tx.tx_id};
    graph_.insert(edge);
    EnrichedRow row;
    row.tx_id = tx.tx_id;
    row.is_illicit = tx.is_illicit;
    row.base = {static_cast<double>(tx.timestamp), bank_code(tx.src.bank), bank_code(tx.dst.bank),
                static_cast<double>(tx.amount) / 100.0, currency_code(tx.currency),
                static_cast<double>(static_cast<int>(tx.payment_format))};
    row.graph = graph_.features(edge);
    return row;
}

std::vector<EnrichedRow> enrich_dataset(const data::Dataset& ds, const WindowConfig& cfg) {
    Enricher enricher(cfg);
    std::vector<EnrichedRow> rows;
    rows.reserve(ds.size());
    for (const auto& tx : ds.transactions()) rows.push_back(enricher.enrich(tx));
    return rows;
}

// ---------------------------------------------------------------------------
// Tables and files

std::optional<std::size_t> FeatureTable::column(std::string_view name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns.begin());
}

FeatureTable FeatureTable::select_rows(std::span<const std::size_t> idx) const {
    FeatureTable out;
    out.tier = tier;
    out.columns = columns;
    out.features = features.select_rows(idx);
    for (auto i : idx) {
        out.tx_ids.push_back(tx_ids[i]);
        out.labels.push_back(labels[i]);
    }
    return out;
}

FeatureTable FeatureTable::restrict_to(Tier t, const WindowConfig& cfg) const {
    if (t > tier) fail(Errc::InvalidConfig, "cannot widen a " + std::string(to_string(tier)) + " table");
    const auto cols = column_names(t, cfg);
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i >= columns.size() || columns[i] != cols[i]) fail(Errc::InvalidConfig, "column layout does not match tier");
    }
    FeatureTable out;
    out.tier = t;
    out.columns = cols;
    out.tx_ids = tx_ids;
    out.labels = labels;
    out.features = features.leading_cols(cols.size());
    return out;
}

FeatureTable make_table(std::span<const EnrichedRow> rows, Tier tier, const WindowConfig& cfg) {
    FeatureTable t;
    t.tier = tier;
    t.columns = column_names(tier, cfg);
    t.features = FeatureMatrix(0, t.columns.size());
    for (const auto& r : rows) {
        t.tx_ids.push_back(r.tx_id);
        t.labels.push_back(r.is_illicit);
        const auto v = r.values(tier, cfg);
        t.features.push_row(v);
    }
    return t;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_features(std::ostream& out, const FeatureTable& table) {
    out << "tx_id,is_laundering";
    for (const auto& c : table.columns) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < table.rows(); ++r) {
        out << table.tx_ids[r] << ',' << (table.labels[r] ? 1 : 0);
        for (double v : table.features.row(r)) out << ',' << format_double(v);
        out << '\n';
    }
}

FeatureTable read_features(std::istream& in) {
    std::string line;
    if (!csv::read_line(in, line)) fail(Errc::MalformedRow, "empty feature file");
    auto header = csv::split_record(line);
    if (!header || header->size() < 2 || (*header)[0] != "tx_id" || (*header)[1] != "is_laundering") {
        throw data::RowError(Errc::MalformedRow, 1, "feature header must start with tx_id,is_laundering");
    }
    FeatureTable t;
    t.columns.assign(header->begin() + 2, header->end());
    auto has = [&](std::string_view c) { return std::find(t.columns.begin(), t.columns.end(), c) != t.columns.end(); };
    t.tier = has("src_out_sum") ? Tier::VertexStats
             : has("sg_2") || has("cycle_2") ? Tier::MultiHop
             : has("fan_in") ? Tier::SingleHop
                             : Tier::Basic;
    t.features = FeatureMatrix(0, t.columns.size());
    std::vector<double> values(t.columns.size());
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = csv::split_record(line);
        if (!f || f->size() != header->size()) throw data::RowError(Errc::MalformedRow, line_no, "wrong field count");
        std::uint64_t id = 0;
        const auto& idf = (*f)[0];
        if (auto [p, ec] = std::from_chars(idf.data(), idf.data() + idf.size(), id); ec != std::errc{}) {
            throw data::RowError(Errc::MalformedRow, line_no, "bad tx_id");
        }
        t.tx_ids.push_back(id);
        t.labels.push_back((*f)[1] == "1");
        for (std::size_t c = 0; c < values.size(); ++c) {
            const auto& s = (*f)[c + 2];
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), values[c]);
            if (ec != std::errc{} || p != s.data() + s.size()) {
                throw data::RowError(Errc::MalformedRow, line_no, "bad value '" + s + "'");
            }
        }
        t.features.push_row(values);
    }
    return t;
}

void write_manifest(std::ostream& out, const WindowConfig& cfg) {
    for (std::size_t i = 0; i < kTierCount; ++i) {
        const auto tier = static_cast<Tier>(i);
        const auto cols = column_names(tier, cfg);
        out << to_string(tier) << ": ";
        for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
        out << '\n';
    }
}

std::map<Tier, std::vector<std::string>> read_manifest(std::istream& in) {
    std::map<Tier, std::vector<std::string>> out;
    std::string line;
    while (csv::read_line(in, line)) {
        const auto colon = line.find(": ");
        if (colon == std::string::npos) continue;
        auto tier = parse_tier(std::string_view(line).substr(0, colon));
        if (!tier) fail(Errc::MalformedRow, "unknown tier in manifest: " + line.substr(0, colon));
        auto cols = csv::split_record(std::string_view(line).substr(colon + 2));
        out[*tier] = cols ? *cols : std::vector<std::string>{};
    }
    return out;
}

} // namespace ppaml::graphfeat
