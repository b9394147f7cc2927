#include "ppaml/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "ppaml/csv.hpp"
#include "ppaml/rng.hpp"

namespace ppaml::data {

namespace {

constexpr std::array<std::string_view, kPaymentFormatCount> kFormatNames = {
    "ACH", "Bitcoin", "Cash", "Cheque", "Credit Card", "Reinvestment", "Wire"};

constexpr std::array<std::string_view, kPatternKindCount> kKindNames = {
    "FanIn", "FanOut", "GatherScatter", "Cycle", "Random"};

std::string normalize_token(std::string_view text) {
    std::string out;
    for (char c : text) {
        if (c == ' ' || c == '_' || c == '-') continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

bool ts_less(const Transaction& a, const Transaction& b) {
    return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.tx_id < b.tx_id;
}

} // namespace

std::string_view to_string(PaymentFormat format) noexcept { return kFormatNames[static_cast<std::size_t>(format)]; }

std::optional<PaymentFormat> parse_payment_format(std::string_view text) noexcept {
    const std::string key = normalize_token(text);
    for (std::size_t i = 0; i < kFormatNames.size(); ++i) {
        if (normalize_token(kFormatNames[i]) == key) return static_cast<PaymentFormat>(i);
    }
    return std::nullopt;
}

std::string_view to_string(PatternKind kind) noexcept { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<PatternKind> parse_pattern_kind(std::string_view text) noexcept {
    const std::string key = normalize_token(text);
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (normalize_token(kKindNames[i]) == key) return static_cast<PatternKind>(i);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<Transaction> transactions, std::vector<PatternGroup> groups)
    : transactions_(std::move(transactions)), groups_(std::move(groups)) {
    std::sort(transactions_.begin(), transactions_.end(), ts_less);
    std::unordered_set<AccountId, AccountIdHash> accounts;
    for (std::size_t i = 0; i < transactions_.size(); ++i) {
        const auto& tx = transactions_[i];
        accounts.insert(tx.src);
        accounts.insert(tx.dst);
        if (tx.is_illicit) ++illicit_count_;
    }
    std::unordered_set<std::uint64_t> ids;
    ids.reserve(transactions_.size());
    for (const auto& tx : transactions_) {
        if (!ids.insert(tx.tx_id).second) fail(Errc::DuplicateTxId, "tx_id " + std::to_string(tx.tx_id));
    }
    account_count_ = accounts.size();
    std::sort(groups_.begin(), groups_.end(),
              [](const PatternGroup& a, const PatternGroup& b) { return a.group_id < b.group_id; });
    for (auto& g : groups_) std::sort(g.member_tx_ids.begin(), g.member_tx_ids.end());
}

Dataset Dataset::with_groups(std::vector<PatternGroup> groups) const {
    std::unordered_set<std::uint64_t> ids;
    for (const auto& tx : transactions_) ids.insert(tx.tx_id);
    for (const auto& g : groups) {
        for (auto id : g.member_tx_ids) {
            if (!ids.count(id)) {
                fail(Errc::InvalidConfig, "group " + std::to_string(g.group_id) + " references unknown tx " +
                                              std::to_string(id));
            }
        }
    }
    return Dataset(transactions_, std::move(groups));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr std::array<std::string_view, 9> kRequiredColumns = {
    "timestamp", "from_bank", "from_account", "to_bank", "to_account",
    "amount",    "currency",  "payment_format", "is_laundering"};

// Decimal string to minor units (two fraction digits), ties to even.
std::optional<std::int64_t> parse_amount(std::string_view text) {
    if (text.empty()) return std::nullopt;
    const auto dot = text.find('.');
    const std::string_view whole = text.substr(0, dot);
    const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty() && frac.empty()) return std::nullopt;
    auto all_digits = [](std::string_view s) {
        return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    if (!all_digits(whole) || !all_digits(frac)) return std::nullopt;

    std::int64_t units = 0;
    for (char c : whole) {
        if (units > (std::numeric_limits<std::int64_t>::max() - 9) / 10 / 100) return std::nullopt;
        units = units * 10 + (c - '0');
    }
    std::int64_t cents = 0;
    for (std::size_t i = 0; i < 2; ++i) cents = cents * 10 + (i < frac.size() ? frac[i] - '0' : 0);
    std::int64_t minor = units * 100 + cents;
    if (frac.size() > 2) {
        const std::string_view rest = frac.substr(2);
        const int first = rest[0] - '0';
        const bool tail_nonzero = std::any_of(rest.begin() + 1, rest.end(), [](char c) { return c != '0'; });
        if (first > 5 || (first == 5 && (tail_nonzero || (minor & 1)))) ++minor;
    }
    return minor;
}

std::optional<std::int64_t> parse_int(std::string_view text) {
    std::int64_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return v;
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// Integer seconds, or "YYYY/MM/DD HH:MM[:SS]" / "YYYY-MM-DD HH:MM[:SS]" in UTC.
std::optional<std::int64_t> parse_timestamp(std::string_view text) {
    if (auto v = parse_int(text)) return v;
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep1 = 0, sep2 = 0;
    const std::string buf(text);
    const int n = std::sscanf(buf.c_str(), "%4d%c%2d%c%2d %2d:%2d:%2d", &y, &sep1, &mo, &sep2, &d, &h, &mi, &s);
    if (n < 7 || sep1 != sep2 || (sep1 != '/' && sep1 != '-')) return std::nullopt;
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) return std::nullopt;
    return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * kSecondsPerDay +
           h * 3600 + mi * 60 + s;
}

std::optional<bool> parse_bool(std::string_view text) {
    const std::string t = normalize_token(text);
    if (t == "1" || t == "true" || t == "yes") return true;
    if (t == "0" || t == "false" || t == "no") return false;
    return std::nullopt;
}

std::string format_amount(std::int64_t minor) {
    std::string cents = std::to_string(minor % 100);
    if (cents.size() < 2) cents.insert(cents.begin(), '0');
    return std::to_string(minor / 100) + "." + cents;
}

} // namespace

std::string CsvSchema::header_for(const std::string& canonical) const {
    auto it = columns.find(canonical);
    return it == columns.end() ? canonical : it->second;
}

Dataset parse_transactions(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!csv::read_line(in, line)) return Dataset{};
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    auto header = csv::split_record(line);
    if (!header) throw RowError(Errc::MalformedRow, 1, "unterminated quote in header");

    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header->size(); ++i) position.emplace((*header)[i], i);
    auto column = [&](std::string_view canonical) -> std::optional<std::size_t> {
        auto it = position.find(schema.header_for(std::string(canonical)));
        if (it == position.end()) return std::nullopt;
        return it->second;
    };
    std::array<std::size_t, kRequiredColumns.size()> idx{};
    for (std::size_t i = 0; i < kRequiredColumns.size(); ++i) {
        auto c = column(kRequiredColumns[i]);
        if (!c) fail(Errc::InvalidConfig, "missing column '" + schema.header_for(std::string(kRequiredColumns[i])) + "'");
        idx[i] = *c;
    }
    const auto id_col = column("tx_id");

    std::vector<Transaction> rows;
    std::unordered_set<std::uint64_t> seen_ids;
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = csv::split_record(line);
        if (!fields) throw RowError(Errc::MalformedRow, line_no, "unterminated quote");
        if (fields->size() != header->size()) {
            throw RowError(Errc::MalformedRow, line_no,
                           "expected " + std::to_string(header->size()) + " fields, got " +
                               std::to_string(fields->size()));
        }
        const auto& f = *fields;
        Transaction tx;
        if (id_col) {
            auto id = parse_int(f[*id_col]);
            if (!id || *id < 0) throw RowError(Errc::MalformedRow, line_no, "bad tx_id '" + f[*id_col] + "'");
            tx.tx_id = static_cast<std::uint64_t>(*id);
        } else {
            tx.tx_id = rows.size();
        }
        if (!seen_ids.insert(tx.tx_id).second) {
            throw RowError(Errc::DuplicateTxId, line_no, "tx_id " + std::to_string(tx.tx_id));
        }
        auto ts = parse_timestamp(f[idx[0]]);
        if (!ts || *ts < 0) throw RowError(Errc::MalformedRow, line_no, "bad timestamp '" + f[idx[0]] + "'");
        tx.timestamp = *ts;
        tx.src = {f[idx[1]], f[idx[2]]};
        tx.dst = {f[idx[3]], f[idx[4]]};
        auto amount = parse_amount(f[idx[5]]);
        if (!amount) throw RowError(Errc::MalformedRow, line_no, "bad amount '" + f[idx[5]] + "'");
        tx.amount = *amount;
        if (f[idx[6]].empty()) throw RowError(Errc::MalformedRow, line_no, "empty currency");
        tx.currency = f[idx[6]];
        auto format = parse_payment_format(f[idx[7]]);
        if (!format) throw RowError(Errc::MalformedRow, line_no, "unknown payment format '" + f[idx[7]] + "'");
        tx.payment_format = *format;
        auto label = parse_bool(f[idx[8]]);
        if (!label) throw RowError(Errc::MalformedRow, line_no, "bad label '" + f[idx[8]] + "'");
        tx.is_illicit = *label;
        if (tx.src == tx.dst && !schema.allow_self_transfer) {
            throw RowError(Errc::MalformedRow, line_no, "self-transfer not allowed by schema");
        }
        rows.push_back(std::move(tx));
    }
    return Dataset(std::move(rows));
}

void write_transactions(std::ostream& out, const Dataset& ds) {
    out << "tx_id,timestamp,from_bank,from_account,to_bank,to_account,amount,currency,payment_format,is_laundering\n";
    for (const auto& tx : ds.transactions()) {
        out << tx.tx_id << ',' << tx.timestamp << ',' << csv::escape(tx.src.bank) << ','
            << csv::escape(tx.src.account) << ',' << csv::escape(tx.dst.bank) << ',' << csv::escape(tx.dst.account)
            << ',' << format_amount(tx.amount) << ',' << csv::escape(tx.currency) << ','
            << to_string(tx.payment_format) << ',' << (tx.is_illicit ? 1 : 0) << '\n';
    }
}

void write_groups(std::ostream& out, std::span<const PatternGroup> groups) {
    for (const auto& g : groups) {
        out << g.group_id << ',' << to_string(g.kind) << ',';
        for (std::size_t i = 0; i < g.member_tx_ids.size(); ++i) {
            if (i) out << ';';
            out << g.member_tx_ids[i];
        }
        out << '\n';
    }
}

std::vector<PatternGroup> parse_groups(std::istream& in) {
    std::vector<PatternGroup> groups;
    std::string line;
    std::size_t line_no = 0;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = csv::split_record(line);
        if (!fields || fields->size() != 3) throw RowError(Errc::MalformedRow, line_no, "expected 3 fields");
        PatternGroup g;
        auto id = parse_int((*fields)[0]);
        auto kind = parse_pattern_kind((*fields)[1]);
        if (!id || *id < 0 || !kind) throw RowError(Errc::MalformedRow, line_no, "bad group header");
        g.group_id = static_cast<std::uint64_t>(*id);
        g.kind = *kind;
        std::string_view members = (*fields)[2];
        while (!members.empty()) {
            const auto semi = members.find(';');
            auto tx = parse_int(members.substr(0, semi));
            if (!tx || *tx < 0) throw RowError(Errc::MalformedRow, line_no, "bad member id");
            g.member_tx_ids.push_back(static_cast<std::uint64_t>(*tx));
            if (semi == std::string_view::npos) break;
            members.remove_prefix(semi + 1);
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

// ---------------------------------------------------------------------------
// Synthetic generation

Signature SyntheticConfig::default_licit_signature() {
    // ACH, Bitcoin, Cash, Cheque, Credit Card, Reinvestment, Wire
    return Signature{{0.10, 0.03, 0.18, 0.22, 0.24, 0.13, 0.10}, std::log(300.0), 1.5};
}

Signature SyntheticConfig::default_illicit_signature() {
    return Signature{{0.70, 0.05, 0.08, 0.05, 0.04, 0.00, 0.08}, std::log(9000.0), 0.5};
}

std::array<std::size_t, kPatternKindCount> SyntheticConfig::reference_group_counts() {
    return {61, 80, 77, 82, 70};
}

namespace {

std::size_t min_size_for(PatternKind kind) {
    switch (kind) {
    case PatternKind::GatherScatter: return 4;
    default: return 2;
    }
}

class Generator {
public:
    explicit Generator(const SyntheticConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

    Dataset run() {
        validate();
        std::size_t pattern_edges_estimate = 0;
        std::size_t total_groups = 0;
        for (auto c : cfg_.group_counts) total_groups += c;
        pattern_edges_estimate = total_groups * (cfg_.min_group_size + cfg_.max_group_size) / 2;
        specials_ = cfg_.merchant_count + cfg_.payer_count;
        pool_ = cfg_.account_pool ? cfg_.account_pool
                                  : std::max<std::size_t>(64, 3 * (cfg_.background_count + pattern_edges_estimate) / 2);
        pool_ = std::max(pool_, specials_ + 2 * cfg_.max_group_size + 2);

        std::vector<PatternGroup> groups;
        std::uint64_t next_group = 0;
        for (std::size_t k = 0; k < kPatternKindCount; ++k) {
            for (std::size_t i = 0; i < cfg_.group_counts[k]; ++i) {
                groups.push_back(make_group(static_cast<PatternKind>(k), next_group++));
            }
        }
        for (std::size_t i = 0; i < cfg_.background_count; ++i) make_background();

        // Assign ids in time order; ties keep generation order.
        std::vector<std::size_t> order(txs_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return txs_[a].timestamp < txs_[b].timestamp; });
        std::vector<std::uint64_t> id_of(txs_.size());
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            id_of[order[pos]] = pos;
            txs_[order[pos]].tx_id = pos;
        }
        for (auto& g : groups) {
            for (auto& m : g.member_tx_ids) m = id_of[m];
        }
        return Dataset(std::move(txs_), std::move(groups));
    }

private:
    void validate() const {
        if (cfg_.min_group_size > cfg_.max_group_size) fail(Errc::InvalidConfig, "min_group_size > max_group_size");
        if (cfg_.bank_count == 0) fail(Errc::InvalidConfig, "bank_count must be positive");
        if (cfg_.time_span_seconds <= 0) fail(Errc::InvalidConfig, "time span must be positive");
        if (cfg_.pattern_window_seconds <= 0 || cfg_.pattern_window_seconds > kSecondsPerDay) {
            fail(Errc::InvalidConfig, "pattern window must be in (0, 86400]");
        }
        bool any_groups = false;
        for (auto c : cfg_.group_counts) any_groups |= c > 0;
        if (any_groups && cfg_.time_span_seconds < kSecondsPerDay) {
            fail(Errc::InvalidConfig, "time span shorter than one day while patterns are requested");
        }
        if (cfg_.merchant_share < 0 || cfg_.payer_share < 0 || cfg_.merchant_share + cfg_.payer_share > 1) {
            fail(Errc::InvalidConfig, "merchant/payer shares must be non-negative and sum to at most 1");
        }
    }

    AccountId account(std::size_t index) const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%09llX", static_cast<unsigned long long>(0x800000000ULL + index));
        return {std::to_string(1 + mix64(index) % cfg_.bank_count), buf};
    }

    std::size_t ordinary_account() { return specials_ + rng_.below(pool_ - specials_); }

    std::vector<std::size_t> distinct_accounts(std::size_t n) {
        std::vector<std::size_t> out;
        std::unordered_set<std::size_t> used;
        while (out.size() < n) {
            const std::size_t a = ordinary_account();
            if (used.insert(a).second) out.push_back(a);
        }
        return out;
    }

    std::int64_t draw_amount(const Signature& sig) {
        const double major = std::exp(sig.log_amount_mean + sig.log_amount_sd * rng_.normal());
        return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(major * 100.0)));
    }

    std::size_t push(std::size_t src, std::size_t dst, std::int64_t ts, const Signature& sig, bool illicit,
                     std::optional<std::uint64_t> group) {
        Transaction tx;
        tx.timestamp = ts;
        tx.src = account(src);
        tx.dst = account(dst);
        tx.amount = draw_amount(sig);
        tx.currency = cfg_.currency;
        tx.payment_format = static_cast<PaymentFormat>(rng_.categorical(sig.format_weights));
        tx.is_illicit = illicit;
        tx.group_id = group;
        txs_.push_back(std::move(tx));
        return txs_.size() - 1;
    }

    void make_background() {
        const double r = rng_.uniform();
        std::size_t src, dst;
        if (r < cfg_.merchant_share && cfg_.merchant_count > 0) {
            src = ordinary_account();
            dst = rng_.below(cfg_.merchant_count);
        } else if (r < cfg_.merchant_share + cfg_.payer_share && cfg_.payer_count > 0) {
            src = cfg_.merchant_count + rng_.below(cfg_.payer_count);
            dst = ordinary_account();
        } else {
            src = ordinary_account();
            do {
                dst = ordinary_account();
            } while (dst == src);
        }
        const std::int64_t ts = cfg_.start_time + static_cast<std::int64_t>(rng_.below(
                                                      static_cast<std::uint64_t>(cfg_.time_span_seconds)));
        push(src, dst, ts, cfg_.licit, false, std::nullopt);
    }

    PatternGroup make_group(PatternKind kind, std::uint64_t group_id) {
        std::size_t size = static_cast<std::size_t>(
            rng_.between(static_cast<std::int64_t>(cfg_.min_group_size), static_cast<std::int64_t>(cfg_.max_group_size)));
        size = std::max(size, min_size_for(kind));
        const std::int64_t window = cfg_.pattern_window_seconds;
        const std::int64_t base =
            cfg_.start_time + rng_.between(0, std::max<std::int64_t>(0, cfg_.time_span_seconds - window));
        std::vector<std::int64_t> times(size);
        for (auto& t : times) t = base + static_cast<std::int64_t>(rng_.below(static_cast<std::uint64_t>(window)));
        std::sort(times.begin(), times.end());

        PatternGroup g{group_id, kind, {}};
        auto edge = [&](std::size_t s, std::size_t d, std::int64_t t) {
            g.member_tx_ids.push_back(push(s, d, t, cfg_.illicit, true, group_id));
        };
        switch (kind) {
        case PatternKind::FanIn: {
            auto acc = distinct_accounts(size + 1);
            for (std::size_t i = 0; i < size; ++i) edge(acc[i + 1], acc[0], times[i]);
            break;
        }
        case PatternKind::FanOut: {
            auto acc = distinct_accounts(size + 1);
            for (std::size_t i = 0; i < size; ++i) edge(acc[0], acc[i + 1], times[i]);
            break;
        }
        case PatternKind::GatherScatter: {
            auto acc = distinct_accounts(size + 1);
            const std::size_t in = size / 2;
            for (std::size_t i = 0; i < size; ++i) {
                if (i < in) edge(acc[i + 1], acc[0], times[i]);
                else edge(acc[0], acc[i + 1], times[i]);
            }
            break;
        }
        case PatternKind::Cycle: {
            auto acc = distinct_accounts(size);
            for (std::size_t i = 0; i < size; ++i) edge(acc[i], acc[(i + 1) % size], times[i]);
            break;
        }
        case PatternKind::Random: {
            auto acc = distinct_accounts(std::max<std::size_t>(3, size / 2 + 1));
            std::size_t cur = 0;
            for (std::size_t i = 0; i < size; ++i) {
                std::size_t next;
                do {
                    next = rng_.below(acc.size());
                } while (next == cur);
                edge(acc[cur], acc[next], times[i]);
                cur = next;
            }
            break;
        }
        }
        return g;
    }

    const SyntheticConfig& cfg_;
    Rng rng_;
    std::size_t specials_ = 0;
    std::size_t pool_ = 0;
    std::vector<Transaction> txs_;
};

} // namespace

Dataset generate_synthetic(const SyntheticConfig& config) { return Generator(config).run(); }

std::optional<std::string> validate_group(const Dataset& ds, const PatternGroup& group) {
    std::unordered_map<std::uint64_t, const Transaction*> by_id;
    for (const auto& tx : ds.transactions()) by_id.emplace(tx.tx_id, &tx);
    std::vector<const Transaction*> edges;
    for (auto id : group.member_tx_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) return "missing member tx " + std::to_string(id);
        if (!it->second->is_illicit) return "member tx " + std::to_string(id) + " is not illicit";
        edges.push_back(it->second);
    }
    if (edges.empty()) return "empty group";

    std::set<AccountId> srcs, dsts;
    for (auto* e : edges) {
        srcs.insert(e->src);
        dsts.insert(e->dst);
    }
    switch (group.kind) {
    case PatternKind::FanIn:
        if (dsts.size() != 1) return "fan-in members must share one destination";
        if (srcs.size() != edges.size()) return "fan-in sources must be distinct";
        break;
    case PatternKind::FanOut:
        if (srcs.size() != 1) return "fan-out members must share one source";
        if (dsts.size() != edges.size()) return "fan-out destinations must be distinct";
        break;
    case PatternKind::GatherScatter: {
        // A hub that receives every gather edge and emits every scatter edge.
        std::optional<AccountId> hub;
        for (const auto& candidate : dsts) {
            if (srcs.count(candidate)) hub = candidate;
        }
        if (!hub) return "gather-scatter has no hub";
        std::size_t in = 0, out = 0;
        for (auto* e : edges) {
            if (e->dst == *hub && e->src != *hub) ++in;
            else if (e->src == *hub && e->dst != *hub) ++out;
            else return "gather-scatter edge does not touch the hub";
        }
        if (in < 2 || out < 2) return "gather-scatter needs at least two gather and two scatter edges";
        break;
    }
    case PatternKind::Cycle: {
        std::map<AccountId, AccountId> next;
        for (auto* e : edges) {
            if (!next.emplace(e->src, e->dst).second) return "cycle vertex has out-degree > 1";
        }
        if (srcs != dsts) return "cycle is not closed";
        // Single orbit covering all vertices.
        AccountId start = edges.front()->src, cur = start;
        std::size_t steps = 0;
        do {
            cur = next.at(cur);
            ++steps;
        } while (cur != start && steps <= edges.size());
        if (steps != edges.size()) return "cycle splits into several orbits";
        break;
    }
    case PatternKind::Random: {
        // Weakly connected over the group's accounts.
        std::map<AccountId, std::vector<AccountId>> adj;
        for (auto* e : edges) {
            adj[e->src].push_back(e->dst);
            adj[e->dst].push_back(e->src);
        }
        std::set<AccountId> seen{adj.begin()->first};
        std::vector<AccountId> stack{adj.begin()->first};
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            for (const auto& w : adj[v]) {
                if (seen.insert(w).second) stack.push_back(w);
            }
        }
        if (seen.size() != adj.size()) return "random pattern is not connected";
        break;
    }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Sampling and splitting

namespace {

std::vector<PatternGroup> groups_within(const Dataset& ds, const std::vector<Transaction>& kept) {
    std::unordered_set<std::uint64_t> ids;
    for (const auto& tx : kept) ids.insert(tx.tx_id);
    std::vector<PatternGroup> out;
    for (const auto& g : ds.groups()) {
        if (std::all_of(g.member_tx_ids.begin(), g.member_tx_ids.end(), [&](auto id) { return ids.count(id) > 0; })) {
            out.push_back(g);
        }
    }
    return out;
}

} // namespace

Dataset undersample_balanced(const Dataset& ds, double target, std::uint64_t seed) {
    if (!(target > 0.0 && target < 1.0)) fail(Errc::InvalidConfig, "target ratio must be in (0, 1)");
    const std::size_t n_illicit = ds.illicit_count();
    const std::size_t n_licit = ds.size() - n_illicit;
    if (n_illicit == 0 || n_licit == 0) fail(Errc::InvalidConfig, "dataset needs both illicit and licit rows");
    constexpr double kTolerance = 0.005;
    const double current = ds.illicit_ratio();
    if (std::abs(current - target) <= kTolerance) return ds;
    if (target < current) {
        fail(Errc::UnreachableRatio, "target " + std::to_string(target) + " below existing ratio " +
                                         std::to_string(current));
    }
    const auto keep = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_illicit) * (1.0 - target) / target));

    std::vector<std::size_t> licit;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!ds.transactions()[i].is_illicit) licit.push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(std::span(licit));
    std::vector<bool> retain(ds.size(), false);
    for (std::size_t i = 0; i < std::min(keep, licit.size()); ++i) retain[licit[i]] = true;

    std::vector<Transaction> out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.transactions()[i].is_illicit || retain[i]) out.push_back(ds.transactions()[i]);
    }
    auto groups = groups_within(ds, out);
    return Dataset(std::move(out), std::move(groups));
}

Dataset sample_pattern_groups(const Dataset& ds, std::size_t k, std::uint64_t seed, bool stratified) {
    const auto groups = ds.groups();
    if (k > groups.size()) {
        fail(Errc::InvalidConfig, "k = " + std::to_string(k) + " exceeds " + std::to_string(groups.size()) + " groups");
    }
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    if (!stratified) {
        std::vector<std::size_t> idx(groups.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(std::span(idx));
        chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
        // Largest-remainder quotas proportional to each kind's share.
        std::array<std::vector<std::size_t>, kPatternKindCount> by_kind;
        for (std::size_t i = 0; i < groups.size(); ++i) by_kind[static_cast<std::size_t>(groups[i].kind)].push_back(i);
        std::array<std::size_t, kPatternKindCount> quota{};
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < kPatternKindCount; ++c) {
            const double exact = static_cast<double>(k) * static_cast<double>(by_kind[c].size()) /
                                 static_cast<double>(groups.size());
            quota[c] = static_cast<std::size_t>(exact);
            assigned += quota[c];
            remainders.emplace_back(-(exact - static_cast<double>(quota[c])), c);
        }
        std::sort(remainders.begin(), remainders.end());
        for (std::size_t i = 0; assigned < k; ++i) {
            const std::size_t c = remainders[i % remainders.size()].second;
            if (quota[c] < by_kind[c].size()) {
                ++quota[c];
                ++assigned;
            }
        }
        for (std::size_t c = 0; c < kPatternKindCount; ++c) {
            rng.shuffle(std::span(by_kind[c]));
            chosen.insert(chosen.end(), by_kind[c].begin(), by_kind[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
        }
    }

    std::unordered_set<std::uint64_t> keep_ids;
    std::vector<PatternGroup> kept_groups;
    for (auto i : chosen) {
        kept_groups.push_back(groups[i]);
        keep_ids.insert(groups[i].member_tx_ids.begin(), groups[i].member_tx_ids.end());
    }
    std::vector<Transaction> out;
    for (const auto& tx : ds.transactions()) {
        if (!tx.is_illicit || keep_ids.count(tx.tx_id)) out.push_back(tx);
    }
    return Dataset(std::move(out), std::move(kept_groups));
}

std::int64_t choose_split_day(std::span<const std::int64_t> days, double train_fraction) {
    if (days.empty()) fail(Errc::DegenerateSplit, "empty input");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(Errc::InvalidConfig, "train fraction must be in (0, 1)");
    if (days.front() == days.back()) fail(Errc::DegenerateSplit, "all rows fall on a single day");
    const double n = static_cast<double>(days.size());
    std::int64_t last_before_end = days.front();
    for (std::size_t i = 0; i < days.size(); ++i) {
        const bool day_ends = i + 1 == days.size() || days[i + 1] != days[i];
        if (!day_ends) continue;
        if (i + 1 == days.size()) break;
        // Report the day just before the first test day, so gap days count as train.
        last_before_end = days[i + 1] - 1;
        if (static_cast<double>(i + 1) / n >= train_fraction) return last_before_end;
    }
    return last_before_end;
}

SplitResult temporal_split(const Dataset& ds, double train_fraction) {
    if (ds.empty()) fail(Errc::DegenerateSplit, "empty dataset");
    std::vector<std::int64_t> days;
    days.reserve(ds.size());
    for (const auto& tx : ds.transactions()) days.push_back(day_of(tx.timestamp));
    const std::int64_t split_day = choose_split_day(days, train_fraction);

    std::vector<Transaction> train, test;
    for (const auto& tx : ds.transactions()) {
        (day_of(tx.timestamp) <= split_day ? train : test).push_back(tx);
    }
    SplitResult result;
    result.split_day = split_day;
    result.achieved_train_fraction = static_cast<double>(train.size()) / static_cast<double>(ds.size());
    auto train_groups = groups_within(ds, train);
    auto test_groups = groups_within(ds, test);
    result.train = Dataset(std::move(train), std::move(train_groups));
    result.test = Dataset(std::move(test), std::move(test_groups));
    return result;
}

} // namespace ppaml::data
