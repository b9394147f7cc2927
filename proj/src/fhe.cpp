#include "ppaml/fhe.hpp"

#include <algorithm>
#include <bit>

#include "ppaml/rng.hpp"

namespace ppaml::fhe {

namespace {

constexpr int kMaxWidth = 62;

void check_same_key(const Ciphertext& a, const Ciphertext& b) {
    if (a.key_id() != b.key_id()) fail(Errc::KeyMismatch, "operands encrypted under different keys");
}

int unsigned_width(std::uint64_t v) { return std::max(1, static_cast<int>(std::bit_width(v))); }

// Smallest width holding c with the given signedness.
int width_of(std::int64_t c, bool is_signed) {
    if (!is_signed) return unsigned_width(static_cast<std::uint64_t>(c));
    const std::uint64_t mag = c < 0 ? static_cast<std::uint64_t>(-(c + 1)) : static_cast<std::uint64_t>(c);
    return static_cast<int>(std::bit_width(mag)) + 1;
}

int widen_for_sign(int width, bool was_signed, bool now_signed) { return width + (now_signed && !was_signed ? 1 : 0); }

} // namespace

std::string to_hex(const KeyId& id) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (auto b : id) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 15]);
    }
    return out;
}

KeyPair keygen(std::uint64_t seed) {
    KeyPair kp;
    KeyId id{};
    const std::uint64_t hi = mix64(seed ^ 0x6b65792d69642d68ULL);
    const std::uint64_t lo = mix64(hi ^ seed ^ 0x6b65792d69642d6cULL);
    for (int i = 0; i < 8; ++i) {
        id[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(hi >> (56 - 8 * i));
        id[static_cast<std::size_t>(8 + i)] = static_cast<std::uint8_t>(lo >> (56 - 8 * i));
    }
    kp.public_key = PublicKey(id);
    kp.secret_key.id_ = id;
    kp.secret_key.secret_ = mix64(lo ^ 0x7365637265740000ULL);
    return kp;
}

bool fits(std::int64_t v, int bits, bool is_signed) noexcept {
    if (bits <= 0) return false;
    if (bits >= 64) return is_signed || v >= 0;
    if (!is_signed) return v >= 0 && static_cast<std::uint64_t>(v) < (std::uint64_t{1} << bits);
    const std::int64_t lim = std::int64_t{1} << (bits - 1);
    return v >= -lim && v < lim;
}

// ---------------------------------------------------------------------------
// Lookup tables

void LookupTable::check_outputs() const {
    if (output_bits_ < 1 || output_bits_ > kMaxWidth) fail(Errc::InvalidConfig, "lookup output width out of range");
    for (auto v : values_) {
        if (!fits(v, output_bits_, output_signed_)) {
            fail(Errc::PrecisionOverflow, "lookup output " + std::to_string(v) + " does not fit " +
                                              std::to_string(output_bits_) + " bits");
        }
    }
}

LookupTable LookupTable::from_entries(std::span<const std::int64_t> entries, int output_bits, bool output_signed) {
    if (entries.empty() || !std::has_single_bit(entries.size())) fail(Errc::InvalidConfig, "table size must be a power of two");
    LookupTable t;
    t.input_bits_ = static_cast<int>(std::countr_zero(entries.size()));
    t.output_bits_ = output_bits;
    t.output_signed_ = output_signed;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i == 0 || entries[i] != entries[i - 1]) {
            t.starts_.push_back(i);
            t.values_.push_back(entries[i]);
        }
    }
    t.check_outputs();
    return t;
}

LookupTable LookupTable::step(int input_bits, std::int64_t threshold, std::int64_t at_or_below, std::int64_t above,
                              int output_bits, bool output_signed) {
    if (input_bits < 1 || input_bits > kMaxWidth) fail(Errc::InvalidConfig, "lookup input width out of range");
    LookupTable t;
    t.input_bits_ = input_bits;
    t.output_bits_ = output_bits;
    t.output_signed_ = output_signed;
    const auto size = std::uint64_t{1} << input_bits;
    if (threshold < 0) {
        t.starts_ = {0};
        t.values_ = {above};
    } else if (static_cast<std::uint64_t>(threshold) + 1 >= size) {
        t.starts_ = {0};
        t.values_ = {at_or_below};
    } else {
        t.starts_ = {0, static_cast<std::uint64_t>(threshold) + 1};
        t.values_ = {at_or_below, above};
    }
    t.check_outputs();
    return t;
}

LookupTable LookupTable::equals(int input_bits, bool input_signed, std::int64_t target, std::int64_t hit,
                                std::int64_t miss, int output_bits, bool output_signed) {
    if (input_bits < 1 || input_bits > kMaxWidth) fail(Errc::InvalidConfig, "lookup input width out of range");
    LookupTable t;
    t.input_bits_ = input_bits;
    t.output_bits_ = output_bits;
    t.output_signed_ = output_signed;
    if (!fits(target, input_bits, input_signed)) {
        t.starts_ = {0};
        t.values_ = {miss};
    } else {
        const auto size = std::uint64_t{1} << input_bits;
        const std::uint64_t index = static_cast<std::uint64_t>(target) & (size - 1);
        if (index > 0) {
            t.starts_.push_back(0);
            t.values_.push_back(miss);
        }
        t.starts_.push_back(index);
        t.values_.push_back(hit);
        if (index + 1 < size) {
            t.starts_.push_back(index + 1);
            t.values_.push_back(miss);
        }
    }
    t.check_outputs();
    return t;
}

std::int64_t LookupTable::at(std::uint64_t index) const {
    if (index >= size()) fail(Errc::InvalidConfig, "lookup index out of range");
    const auto it = std::upper_bound(starts_.begin(), starts_.end(), index);
    return values_[static_cast<std::size_t>(it - starts_.begin()) - 1];
}

// ---------------------------------------------------------------------------
// Context

EvalContext::EvalContext(int max_lut_bits, int max_accumulator_bits, CostWeights weights)
    : max_lut_bits_(max_lut_bits), max_accumulator_bits_(max_accumulator_bits), weights_(weights) {
    if (max_lut_bits < 1 || max_lut_bits > kMaxWidth) fail(Errc::InvalidConfig, "max_lut_bits out of range");
    if (max_accumulator_bits < 2 || max_accumulator_bits > kMaxWidth) fail(Errc::InvalidConfig, "max_accumulator_bits out of range");
}

CostReport EvalContext::report() const noexcept {
    CostReport r;
    r.lut_ops = lut_ops_.load(std::memory_order_relaxed);
    r.add_ops = add_ops_.load(std::memory_order_relaxed);
    r.encrypt_ops = encrypt_ops_.load(std::memory_order_relaxed);
    r.simulated_cost = weights_.lut * static_cast<double>(r.lut_ops) + weights_.add * static_cast<double>(r.add_ops) +
                       weights_.encrypt * static_cast<double>(r.encrypt_ops);
    return r;
}

CostReport cost_report(const EvalContext& ctx) noexcept { return ctx.report(); }

// ---------------------------------------------------------------------------
// Simulation backend

Ciphertext SimBackend::encrypt(const PublicKey& pk, std::int64_t m, int bit_width, bool is_signed,
                               EvalContext& ctx) const {
    if (bit_width < 1 || bit_width > kMaxWidth) fail(Errc::InvalidConfig, "bit width out of range");
    if (!fits(m, bit_width, is_signed)) {
        fail(Errc::PrecisionOverflow, std::to_string(m) + " does not fit " + std::to_string(bit_width) +
                                          (is_signed ? " signed" : " unsigned") + " bits");
    }
    ctx.count_encrypt();
    Ciphertext ct;
    ct.key_id_ = pk.key_id();
    ct.value_ = m;
    ct.bit_width_ = bit_width;
    ct.signed_ = is_signed;
    return ct;
}

std::int64_t SimBackend::decrypt(const SecretKey& sk, const Ciphertext& ct) const {
    if (sk.key_id() != ct.key_id_) {
        fail(Errc::KeyMismatch, "ciphertext key " + to_hex(ct.key_id_) + " but secret key " + to_hex(sk.key_id()));
    }
    return ct.value_;
}

Ciphertext SimBackend::add(const Ciphertext& a, const Ciphertext& b, EvalContext& ctx) const {
    check_same_key(a, b);
    Ciphertext out = a;
    out.signed_ = a.signed_ || b.signed_;
    const int wa = widen_for_sign(a.bit_width_, a.signed_, out.signed_);
    const int wb = widen_for_sign(b.bit_width_, b.signed_, out.signed_);
    out.bit_width_ = std::min(std::max(wa, wb) + 1, ctx.max_accumulator_bits());
    if (__builtin_add_overflow(a.value_, b.value_, &out.value_) || !fits(out.value_, out.bit_width_, out.signed_)) {
        fail(Errc::AccumulatorOverflow, "sum exceeds the " + std::to_string(ctx.max_accumulator_bits()) + "-bit accumulator");
    }
    ctx.count_add();
    return out;
}

Ciphertext SimBackend::add_plain(const Ciphertext& a, std::int64_t c, EvalContext& ctx) const {
    Ciphertext out = a;
    out.signed_ = a.signed_ || c < 0;
    const int wa = widen_for_sign(a.bit_width_, a.signed_, out.signed_);
    out.bit_width_ = std::min(std::max(wa, width_of(c, out.signed_)) + 1, ctx.max_accumulator_bits());
    if (__builtin_add_overflow(a.value_, c, &out.value_) || !fits(out.value_, out.bit_width_, out.signed_)) {
        fail(Errc::AccumulatorOverflow, "sum exceeds the " + std::to_string(ctx.max_accumulator_bits()) + "-bit accumulator");
    }
    ctx.count_add();
    return out;
}

Ciphertext SimBackend::negate(const Ciphertext& a, EvalContext& ctx) const {
    Ciphertext out = a;
    out.value_ = -a.value_;
    out.bit_width_ = std::min(a.signed_ ? a.bit_width_ + 1 : a.bit_width_ + 1, ctx.max_accumulator_bits());
    out.signed_ = true;
    if (!fits(out.value_, out.bit_width_, true)) fail(Errc::AccumulatorOverflow, "negation overflows the accumulator");
    ctx.count_add();
    return out;
}

Ciphertext SimBackend::apply_lut(const Ciphertext& ct, const LookupTable& table, EvalContext& ctx) const {
    if (ct.bit_width_ > ctx.max_lut_bits()) {
        fail(Errc::LutWidthExceeded, std::to_string(ct.bit_width_) + "-bit input exceeds the " +
                                         std::to_string(ctx.max_lut_bits()) + "-bit lookup limit");
    }
    if (table.input_bits() != ct.bit_width_) {
        fail(Errc::InvalidConfig, "table covers " + std::to_string(table.input_bits()) + "-bit inputs, ciphertext has " +
                                      std::to_string(ct.bit_width_));
    }
    const std::uint64_t index = static_cast<std::uint64_t>(ct.value_) & (table.size() - 1);
    Ciphertext out = ct;
    out.value_ = table.at(index);
    out.bit_width_ = table.output_bits();
    out.signed_ = table.output_signed();
    ctx.count_lut();
    return out;
}

const Backend& default_backend() {
    static const SimBackend backend;
    return backend;
}

Ciphertext encrypt(const PublicKey& pk, std::int64_t m, int bit_width, EvalContext& ctx, bool is_signed) {
    return default_backend().encrypt(pk, m, bit_width, is_signed, ctx);
}
std::int64_t decrypt(const SecretKey& sk, const Ciphertext& ct) { return default_backend().decrypt(sk, ct); }
Ciphertext add(const Ciphertext& a, const Ciphertext& b, EvalContext& ctx) { return default_backend().add(a, b, ctx); }
Ciphertext add_plain(const Ciphertext& a, std::int64_t c, EvalContext& ctx) { return default_backend().add_plain(a, c, ctx); }
Ciphertext apply_lut(const Ciphertext& ct, const LookupTable& table, EvalContext& ctx) {
    return default_backend().apply_lut(ct, table, ctx);
}

std::vector<Ciphertext> encrypt_row(const PublicKey& pk, std::span<const std::int64_t> qrow, int n_bits,
                                    EvalContext& ctx, const Backend& backend) {
    std::vector<Ciphertext> out;
    out.reserve(qrow.size());
    for (auto q : qrow) out.push_back(backend.encrypt(pk, q, n_bits, false, ctx));
    return out;
}

// ---------------------------------------------------------------------------
// Ensemble evaluation

namespace {

// Pairwise reduction keeps bit-width growth logarithmic in the term count.
Ciphertext balanced_sum(std::vector<Ciphertext> terms, const Backend& backend, EvalContext& ctx) {
    while (terms.size() > 1) {
        std::vector<Ciphertext> next;
        next.reserve((terms.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < terms.size(); i += 2) next.push_back(backend.add(terms[i], terms[i + 1], ctx));
        if (terms.size() % 2) next.push_back(terms.back());
        terms = std::move(next);
    }
    return terms.front();
}

} // namespace

EncryptedEnsemble::EncryptedEnsemble(const quant::QuantizedEnsemble& qe) : qe_(qe) {
    qe_.validate();
    const int bits = qe_.n_bits();
    for (const auto& tree : qe_.trees) {
        TreePlan plan;
        if (tree.nodes.size() == 1) {
            plan.is_constant = true;
            plan.constant = tree.nodes[0].leaf;
            plans_.push_back(std::move(plan));
            continue;
        }
        std::vector<std::size_t> slot(tree.nodes.size(), 0);
        for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
            const auto& n = tree.nodes[i];
            if (n.is_leaf()) continue;
            slot[i] = plan.internal.size();
            plan.internal.push_back(i);
            plan.features.push_back(static_cast<std::size_t>(n.feature));
            plan.comparisons.push_back(LookupTable::step(bits, n.threshold, 1, 0, 1, false));
        }
        // Depth-first walk recording which comparisons each leaf needs.
        struct Frame {
            std::size_t node;
            std::vector<std::size_t> left, right;
        };
        std::vector<Frame> stack{{0, {}, {}}};
        while (!stack.empty()) {
            Frame f = std::move(stack.back());
            stack.pop_back();
            const auto& n = tree.nodes[f.node];
            if (n.is_leaf()) {
                plan.leaves.push_back({std::move(f.left), std::move(f.right), n.leaf});
                continue;
            }
            Frame r{static_cast<std::size_t>(n.right), f.left, f.right};
            r.right.push_back(slot[f.node]);
            Frame l{static_cast<std::size_t>(n.left), std::move(f.left), std::move(f.right)};
            l.left.push_back(slot[f.node]);
            stack.push_back(std::move(r));
            stack.push_back(std::move(l));
        }
        plans_.push_back(std::move(plan));
    }
}

Ciphertext EncryptedEnsemble::evaluate(std::span<const Ciphertext> enc_row, const PublicKey& pk, EvalContext& ctx,
                                       const Backend& backend) const {
    if (enc_row.size() != qe_.arity) {
        fail(Errc::ArityMismatch, "encrypted row has " + std::to_string(enc_row.size()) + " features, model expects " +
                                      std::to_string(qe_.arity));
    }
    const int bits = qe_.n_bits();
    for (const auto& ct : enc_row) {
        if (ct.key_id() != pk.key_id()) fail(Errc::KeyMismatch, "row encrypted under a different key");
        if (ct.bit_width() != bits || ct.is_signed()) {
            fail(Errc::PrecisionOverflow, "row ciphertext width " + std::to_string(ct.bit_width()) + " != n_bits " +
                                              std::to_string(bits));
        }
    }

    std::int64_t constant = qe_.base;
    std::vector<Ciphertext> tree_outputs;
    for (const auto& plan : plans_) {
        if (plan.is_constant) {
            constant += plan.constant;
            continue;
        }
        // 1 where the comparison x <= t holds, and its negation for right turns.
        std::vector<Ciphertext> holds, negated(plan.internal.size());
        std::vector<bool> has_negated(plan.internal.size(), false);
        holds.reserve(plan.internal.size());
        for (std::size_t k = 0; k < plan.internal.size(); ++k) {
            holds.push_back(backend.apply_lut(enc_row[plan.features[k]], plan.comparisons[k], ctx));
        }
        std::vector<Ciphertext> leaf_outputs;
        leaf_outputs.reserve(plan.leaves.size());
        for (const auto& leaf : plan.leaves) {
            // Path score = #left turns taken + #right turns taken; equals the
            // leaf depth exactly on the routed path.
            std::vector<Ciphertext> terms;
            for (auto k : leaf.left_nodes) terms.push_back(holds[k]);
            for (auto k : leaf.right_nodes) {
                if (!has_negated[k]) {
                    negated[k] = backend.negate(holds[k], ctx);
                    has_negated[k] = true;
                }
                terms.push_back(negated[k]);
            }
            Ciphertext path = balanced_sum(std::move(terms), backend, ctx);
            const auto depth = static_cast<std::int64_t>(leaf.left_nodes.size() + leaf.right_nodes.size());
            const auto rights = static_cast<std::int64_t>(leaf.right_nodes.size());
            if (rights > 0) path = backend.add_plain(path, rights, ctx);
            const auto select =
                LookupTable::equals(path.bit_width(), path.is_signed(), depth, leaf.value, 0, bits, true);
            leaf_outputs.push_back(backend.apply_lut(path, select, ctx));
        }
        tree_outputs.push_back(balanced_sum(std::move(leaf_outputs), backend, ctx));
    }
    if (tree_outputs.empty()) {
        return backend.encrypt(pk, constant, std::max(quant::signed_width(std::abs(constant)), 2), true, ctx);
    }
    Ciphertext total = balanced_sum(std::move(tree_outputs), backend, ctx);
    if (constant != 0) total = backend.add_plain(total, constant, ctx);
    return total;
}

Ciphertext eval_ensemble_encrypted(const quant::QuantizedEnsemble& qe, std::span<const Ciphertext> enc_row,
                                   const PublicKey& pk, EvalContext& ctx, const Backend& backend) {
    return EncryptedEnsemble(qe).evaluate(enc_row, pk, ctx, backend);
}

// ---------------------------------------------------------------------------
// Wire encoding

std::array<std::uint8_t, kCiphertextWireSize> to_wire(const Ciphertext& ct) {
    std::array<std::uint8_t, kCiphertextWireSize> out{};
    std::copy(ct.key_id_.begin(), ct.key_id_.end(), out.begin());
    out[16] = ct.signed_ ? 1 : 0;
    out[17] = static_cast<std::uint8_t>(ct.bit_width_);
    const auto v = static_cast<std::uint64_t>(ct.value_);
    for (int i = 0; i < 8; ++i) out[18 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
    return out;
}

Ciphertext ciphertext_from_wire(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kCiphertextWireSize) fail(Errc::ProtocolError, "ciphertext must be 26 bytes");
    if (bytes[16] & ~1U) fail(Errc::ProtocolError, "unknown ciphertext flags");
    Ciphertext ct;
    std::copy_n(bytes.begin(), 16, ct.key_id_.begin());
    ct.signed_ = bytes[16] & 1U;
    ct.bit_width_ = bytes[17];
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[18 + static_cast<std::size_t>(i)]) << (8 * i);
    ct.value_ = static_cast<std::int64_t>(v);
    if (ct.bit_width_ < 1 || ct.bit_width_ > kMaxWidth || !fits(ct.value_, ct.bit_width_, ct.signed_)) {
        fail(Errc::ProtocolError, "ciphertext payload does not fit its declared width");
    }
    return ct;
}

} // namespace ppaml::fhe
