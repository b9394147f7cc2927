#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppaml/error.hpp"
#include "ppaml/quant.hpp"

// Functional simulation of a torus-style FHE backend. The plaintext travels
// inside each Ciphertext unprotected: this provides the arithmetic and
// precision contract of the scheme, not its security.
namespace ppaml::fhe {

using KeyId = std::array<std::uint8_t, 16>;

std::string to_hex(const KeyId& id);

struct KeyPair;

class PublicKey {
public:
    PublicKey() = default;
    explicit PublicKey(const KeyId& id) : id_(id) {}
    const KeyId& key_id() const noexcept { return id_; }
    friend bool operator==(const PublicKey&, const PublicKey&) = default;

private:
    KeyId id_{};
};

/// Never leaves the process that generated it: there is no encoder for it.
class SecretKey {
public:
    const KeyId& key_id() const noexcept { return id_; }

private:
    friend struct KeyPair;
    friend KeyPair keygen(std::uint64_t seed);
    KeyId id_{};
    std::uint64_t secret_ = 0;
};

struct KeyPair {
    PublicKey public_key;
    SecretKey secret_key;
    const KeyId& key_id() const noexcept { return public_key.key_id(); }
};

/// Deterministic per seed.
KeyPair keygen(std::uint64_t seed);

class Ciphertext {
public:
    Ciphertext() = default;
    const KeyId& key_id() const noexcept { return key_id_; }
    int bit_width() const noexcept { return bit_width_; }
    bool is_signed() const noexcept { return signed_; }

private:
    friend class SimBackend;
    friend std::array<std::uint8_t, 26> to_wire(const Ciphertext& ct);
    friend Ciphertext ciphertext_from_wire(std::span<const std::uint8_t> bytes);
    KeyId key_id_{};
    std::int64_t value_ = 0;
    int bit_width_ = 0;
    bool signed_ = false;
};

/// True when v fits in `bits` (two's complement if is_signed).
bool fits(std::int64_t v, int bits, bool is_signed) noexcept;

/// Univariate function over the 2^input_bits encodings of a ciphertext,
/// stored as runs of equal outputs. Signed inputs index by two's complement.
class LookupTable {
public:
    /// entries.size() must be a power of two.
    static LookupTable from_entries(std::span<const std::int64_t> entries, int output_bits, bool output_signed);
    /// x <= t ? at_or_below : above, over unsigned inputs.
    static LookupTable step(int input_bits, std::int64_t t, std::int64_t at_or_below, std::int64_t above,
                            int output_bits, bool output_signed);
    /// x == target ? hit : miss, over inputs of the given signedness.
    static LookupTable equals(int input_bits, bool input_signed, std::int64_t target, std::int64_t hit, std::int64_t miss,
                              int output_bits, bool output_signed);

    int input_bits() const noexcept { return input_bits_; }
    std::uint64_t size() const noexcept { return std::uint64_t{1} << input_bits_; }
    int output_bits() const noexcept { return output_bits_; }
    bool output_signed() const noexcept { return output_signed_; }
    /// Output for encoding index i in [0, size()).
    std::int64_t at(std::uint64_t index) const;

private:
    LookupTable() = default;
    void check_outputs() const;
    int input_bits_ = 0;
    int output_bits_ = 1;
    bool output_signed_ = false;
    std::vector<std::uint64_t> starts_; ///< ascending run starts, starts_[0] == 0
    std::vector<std::int64_t> values_;
};

struct CostWeights {
    double lut = 1.0;
    double add = 0.001;
    double encrypt = 0.01;
};

struct CostReport {
    std::uint64_t lut_ops = 0;
    std::uint64_t add_ops = 0;
    std::uint64_t encrypt_ops = 0;
    double simulated_cost = 0.0;
};

/// Limits and counters for a run of homomorphic operations. Counters are
/// atomic, so concurrent evaluations sharing a context report exact totals.
class EvalContext {
public:
    explicit EvalContext(int max_lut_bits = 16, int max_accumulator_bits = quant::kDefaultAccumulatorBits,
                         CostWeights weights = {});

    int max_lut_bits() const noexcept { return max_lut_bits_; }
    int max_accumulator_bits() const noexcept { return max_accumulator_bits_; }
    const CostWeights& weights() const noexcept { return weights_; }

    void count_lut() noexcept { lut_ops_.fetch_add(1, std::memory_order_relaxed); }
    void count_add() noexcept { add_ops_.fetch_add(1, std::memory_order_relaxed); }
    void count_encrypt() noexcept { encrypt_ops_.fetch_add(1, std::memory_order_relaxed); }

    CostReport report() const noexcept;

private:
    int max_lut_bits_;
    int max_accumulator_bits_;
    CostWeights weights_;
    std::atomic<std::uint64_t> lut_ops_{0};
    std::atomic<std::uint64_t> add_ops_{0};
    std::atomic<std::uint64_t> encrypt_ops_{0};
};

CostReport cost_report(const EvalContext& ctx) noexcept;

/// The operations a scheme must provide. Callers use only this interface.
class Backend {
public:
    virtual ~Backend() = default;
    virtual Ciphertext encrypt(const PublicKey& pk, std::int64_t m, int bit_width, bool is_signed,
                               EvalContext& ctx) const = 0;
    virtual std::int64_t decrypt(const SecretKey& sk, const Ciphertext& ct) const = 0;
    virtual Ciphertext add(const Ciphertext& a, const Ciphertext& b, EvalContext& ctx) const = 0;
    virtual Ciphertext add_plain(const Ciphertext& a, std::int64_t c, EvalContext& ctx) const = 0;
    virtual Ciphertext negate(const Ciphertext& a, EvalContext& ctx) const = 0;
    virtual Ciphertext apply_lut(const Ciphertext& ct, const LookupTable& table, EvalContext& ctx) const = 0;
};

class SimBackend final : public Backend {
public:
    Ciphertext encrypt(const PublicKey& pk, std::int64_t m, int bit_width, bool is_signed,
                       EvalContext& ctx) const override;
    std::int64_t decrypt(const SecretKey& sk, const Ciphertext& ct) const override;
    Ciphertext add(const Ciphertext& a, const Ciphertext& b, EvalContext& ctx) const override;
    Ciphertext add_plain(const Ciphertext& a, std::int64_t c, EvalContext& ctx) const override;
    Ciphertext negate(const Ciphertext& a, EvalContext& ctx) const override;
    Ciphertext apply_lut(const Ciphertext& ct, const LookupTable& table, EvalContext& ctx) const override;
};

const Backend& default_backend();

// Shorthands over default_backend().
Ciphertext encrypt(const PublicKey& pk, std::int64_t m, int bit_width, EvalContext& ctx, bool is_signed = false);
std::int64_t decrypt(const SecretKey& sk, const Ciphertext& ct);
Ciphertext add(const Ciphertext& a, const Ciphertext& b, EvalContext& ctx);
Ciphertext add_plain(const Ciphertext& a, std::int64_t c, EvalContext& ctx);
Ciphertext apply_lut(const Ciphertext& ct, const LookupTable& table, EvalContext& ctx);

/// Encrypts every level of a quantized row at the model's n_bits.
std::vector<Ciphertext> encrypt_row(const PublicKey& pk, std::span<const std::int64_t> qrow, int n_bits,
                                    EvalContext& ctx, const Backend& backend = default_backend());

/// Ensemble lowered to lookup tables once, reusable across rows.
class EncryptedEnsemble {
public:
    explicit EncryptedEnsemble(const quant::QuantizedEnsemble& qe);

    /// Encrypted integer score: base plus one selected leaf per tree.
    Ciphertext evaluate(std::span<const Ciphertext> enc_row, const PublicKey& pk, EvalContext& ctx,
                        const Backend& backend = default_backend()) const;

    const quant::QuantizedEnsemble& model() const noexcept { return qe_; }

private:
    struct Leaf {
        std::vector<std::size_t> left_nodes;  ///< nodes whose comparison must hold
        std::vector<std::size_t> right_nodes; ///< nodes whose comparison must fail
        std::int64_t value = 0;
    };
    struct TreePlan {
        std::vector<std::size_t> internal;   ///< node index of each comparison
        std::vector<LookupTable> comparisons; ///< parallel to `internal`
        std::vector<std::size_t> features;
        std::vector<Leaf> leaves;
        std::int64_t constant = 0; ///< value of a tree that is a single leaf
        bool is_constant = false;
    };

    quant::QuantizedEnsemble qe_;
    std::vector<TreePlan> plans_;
};

Ciphertext eval_ensemble_encrypted(const quant::QuantizedEnsemble& qe, std::span<const Ciphertext> enc_row,
                                   const PublicKey& pk, EvalContext& ctx, const Backend& backend = default_backend());

inline constexpr std::size_t kCiphertextWireSize = 26;

/// {key_id:16}{flags:1, bit 0 = signed}{bit_width:1}{payload: int64 little-endian}
std::array<std::uint8_t, kCiphertextWireSize> to_wire(const Ciphertext& ct);
Ciphertext ciphertext_from_wire(std::span<const std::uint8_t> bytes);

} // namespace ppaml::fhe
