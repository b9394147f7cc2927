#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ppaml/error.hpp"

namespace ppaml::data {

inline constexpr std::int64_t kSecondsPerDay = 86400;

/// Day index of a timestamp (UTC, floor division).
constexpr std::int64_t day_of(std::int64_t timestamp) noexcept {
    return timestamp >= 0 ? timestamp / kSecondsPerDay
                          : -((-timestamp + kSecondsPerDay - 1) / kSecondsPerDay);
}

enum class PaymentFormat : std::uint8_t { ACH, Bitcoin, Cash, Cheque, CreditCard, Reinvestment, Wire };
inline constexpr std::size_t kPaymentFormatCount = 7;

std::string_view to_string(PaymentFormat format) noexcept;
std::optional<PaymentFormat> parse_payment_format(std::string_view text) noexcept;

struct AccountId {
    std::string bank;
    std::string account;

    friend auto operator<=>(const AccountId&, const AccountId&) = default;
    friend bool operator==(const AccountId&, const AccountId&) = default;
};

struct AccountIdHash {
    std::size_t operator()(const AccountId& id) const noexcept {
        const std::size_t h = std::hash<std::string>{}(id.bank);
        return h ^ (std::hash<std::string>{}(id.account) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    }
};

struct Transaction {
    std::uint64_t tx_id = 0;
    std::int64_t timestamp = 0;
    AccountId src;
    AccountId dst;
    std::int64_t amount = 0; ///< minor currency units
    std::string currency;
    PaymentFormat payment_format = PaymentFormat::ACH;
    bool is_illicit = false;
    std::optional<std::uint64_t> group_id; ///< ground truth, synthetic data only

    friend bool operator==(const Transaction&, const Transaction&) = default;
};

enum class PatternKind : std::uint8_t { FanIn, FanOut, GatherScatter, Cycle, Random };
inline constexpr std::size_t kPatternKindCount = 5;

std::string_view to_string(PatternKind kind) noexcept;
std::optional<PatternKind> parse_pattern_kind(std::string_view text) noexcept;

struct PatternGroup {
    std::uint64_t group_id = 0;
    PatternKind kind = PatternKind::Random;
    std::vector<std::uint64_t> member_tx_ids; ///< ascending

    friend bool operator==(const PatternGroup&, const PatternGroup&) = default;
};

/// Immutable, time-ordered collection of transactions plus any ground-truth
/// pattern groups. Construction sorts by (timestamp, tx_id) and rejects
/// duplicate ids.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<Transaction> transactions, std::vector<PatternGroup> groups = {});

    std::span<const Transaction> transactions() const noexcept { return transactions_; }
    std::span<const PatternGroup> groups() const noexcept { return groups_; }
    std::size_t size() const noexcept { return transactions_.size(); }
    bool empty() const noexcept { return transactions_.empty(); }
    std::size_t account_count() const noexcept { return account_count_; }
    std::size_t illicit_count() const noexcept { return illicit_count_; }
    double illicit_ratio() const noexcept {
        return transactions_.empty() ? 0.0 : static_cast<double>(illicit_count_) / static_cast<double>(size());
    }

    /// Copy of this dataset with `groups` attached (ids must refer to members).
    Dataset with_groups(std::vector<PatternGroup> groups) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::vector<Transaction> transactions_;
    std::vector<PatternGroup> groups_;
    std::size_t account_count_ = 0;
    std::size_t illicit_count_ = 0;
};

/// Parse failure pinned to a 1-based input line (the header is line 1).
class RowError : public Error {
public:
    RowError(Errc code, std::size_t line, const std::string& detail)
        : Error(code, "line " + std::to_string(line) + ": " + detail), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Maps canonical field names onto the header names used by a particular file.
/// Canonical fields: timestamp, from_bank, from_account, to_bank, to_account,
/// amount, currency, payment_format, is_laundering, and the optional tx_id.
struct CsvSchema {
    std::map<std::string, std::string> columns;
    bool allow_self_transfer = false;

    std::string header_for(const std::string& canonical) const;
};

Dataset parse_transactions(std::istream& in, const CsvSchema& schema = {});
void write_transactions(std::ostream& out, const Dataset& ds);

/// Sidecar format: one line per group, `group_id,kind,tx_id;tx_id;...`.
void write_groups(std::ostream& out, std::span<const PatternGroup> groups);
std::vector<PatternGroup> parse_groups(std::istream& in);

/// Basic-feature fingerprint of a class of transactions.
struct Signature {
    std::array<double, kPaymentFormatCount> format_weights{};
    double log_amount_mean = 0.0; ///< natural log of major units
    double log_amount_sd = 1.0;
};

struct SyntheticConfig {
    std::array<std::size_t, kPatternKindCount> group_counts{}; ///< indexed by PatternKind
    std::size_t min_group_size = 3;
    std::size_t max_group_size = 12;
    std::size_t background_count = 0;
    std::int64_t start_time = 1661990400; ///< 2022-09-01T00:00:00Z
    std::int64_t time_span_seconds = 30 * kSecondsPerDay;
    std::int64_t pattern_window_seconds = kSecondsPerDay;
    std::size_t account_pool = 0; ///< 0 = derived from the transaction volume
    std::size_t bank_count = 20;
    std::size_t merchant_count = 25;  ///< licit accounts that collect many payments
    double merchant_share = 0.08;     ///< fraction of background paid to merchants
    std::size_t payer_count = 15;     ///< licit accounts that pay out to many accounts
    double payer_share = 0.04;
    std::string currency = "USD";
    Signature licit = default_licit_signature();
    Signature illicit = default_illicit_signature();
    std::uint64_t seed = 0;

    static Signature default_licit_signature();
    static Signature default_illicit_signature();
    /// Group counts observed in the reference laundering corpus (370 groups).
    static std::array<std::size_t, kPatternKindCount> reference_group_counts();
};

Dataset generate_synthetic(const SyntheticConfig& config);

/// Empty optional when `group` matches its kind's topology, else a reason.
std::optional<std::string> validate_group(const Dataset& ds, const PatternGroup& group);

Dataset undersample_balanced(const Dataset& ds, double target_illicit_ratio, std::uint64_t seed);

/// Keeps k uniformly chosen groups; transactions of the remaining groups (and
/// any illicit transaction outside the kept groups) are removed.
Dataset sample_pattern_groups(const Dataset& ds, std::size_t k, std::uint64_t seed, bool stratified = false);

struct SplitResult {
    Dataset train;
    Dataset test;
    std::int64_t split_day = 0;
    double achieved_train_fraction = 0.0;
};

/// Last train day: the smallest boundary whose cumulative share of `days`
/// (ascending) reaches `train_fraction`, clamped so at least one day remains
/// for testing. Empty days before the first test day count as train, so the
/// first test day is always the returned value + 1.
std::int64_t choose_split_day(std::span<const std::int64_t> days, double train_fraction);

SplitResult temporal_split(const Dataset& ds, double train_fraction);

} // namespace ppaml::data
