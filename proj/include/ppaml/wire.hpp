#pragma once

#include <array>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ppaml/error.hpp"
#include "ppaml/fhe.hpp"
#include "ppaml/graphfeat.hpp"

// Binary frames: {length:u32 BE}{type:u8}{version:u8}{payload}. `length`
// counts type, version and payload. Payload integers are little-endian;
// strings are {u16 length}{bytes}. docs/protocol.md lists every layout.
namespace ppaml::wire {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 64u << 20;

using SessionId = std::array<std::uint8_t, 16>;

enum class MsgType : std::uint8_t {
    Register = 0x01,
    RegisterAck = 0x02,
    QueryInit = 0x03,
    QueryForward = 0x04,
    EncryptedBatch = 0x05,
    BatchAck = 0x06,
    SubmitDone = 0x07,
    ComputeDone = 0x08,
    Error = 0x7F,
};

struct Register {
    std::string institution_id;
};
struct RegisterAck {
    std::string institution_id;
    std::uint32_t position = 0; ///< 0-based registration order
};
struct QueryInit {
    SessionId session{};
    std::string model_id;
    graphfeat::Tier tier = graphfeat::Tier::Basic;
    fhe::PublicKey public_key;
};
/// Sent to every participant, and back to the inquiry as acceptance.
struct QueryForward {
    SessionId session{};
    std::string model_id;
    graphfeat::Tier tier = graphfeat::Tier::Basic;
    fhe::PublicKey public_key;
    std::uint8_t n_bits = 0;
    std::uint32_t arity = 0;
};
struct EncryptedBatch {
    SessionId session{};
    std::uint32_t batch_seq = 0;
    std::uint32_t arity = 0;
    std::vector<std::vector<fhe::Ciphertext>> rows;
};
struct BatchAck {
    SessionId session{};
    std::uint32_t batch_seq = 0;
    std::uint32_t rows = 0;
};
struct SubmitDone {
    SessionId session{};
    std::uint32_t batches = 0;
};
struct ResultEntry {
    std::string institution_id;
    std::uint32_t batch_seq = 0;
    std::uint32_t row = 0;
    fhe::Ciphertext score;
};
struct ComputeDone {
    SessionId session{};
    double leaf_scale = 0.0; ///< margin = leaf_scale * score + margin_offset
    double margin_offset = 0.0;
    std::vector<ResultEntry> results;
};
struct ErrorMsg {
    SessionId session{};
    Errc code = Errc::ProtocolError;
    std::string detail;
};

using Message = std::variant<Register, RegisterAck, QueryInit, QueryForward, EncryptedBatch, BatchAck, SubmitDone,
                             ComputeDone, ErrorMsg>;

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(const std::string& s);
    void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::span<const std::uint8_t> raw(std::size_t n);
    bool done() const noexcept { return at_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t at_ = 0;
};

void encode_payload(Writer& w, const Register& m);
void encode_payload(Writer& w, const RegisterAck& m);
void encode_payload(Writer& w, const QueryInit& m);
void encode_payload(Writer& w, const QueryForward& m);
void encode_payload(Writer& w, const EncryptedBatch& m);
void encode_payload(Writer& w, const BatchAck& m);
void encode_payload(Writer& w, const SubmitDone& m);
void encode_payload(Writer& w, const ComputeDone& m);
void encode_payload(Writer& w, const ErrorMsg& m);
void encode_payload(Writer& w, const fhe::PublicKey& pk);
void encode_payload(Writer& w, const fhe::Ciphertext& ct);

/// Types with a wire encoding. Secret keys have none, so no message can
/// carry one.
template <class T>
concept WireEncodable = requires(Writer& w, const T& v) { encode_payload(w, v); };

static_assert(!WireEncodable<fhe::SecretKey>);
static_assert(!WireEncodable<fhe::KeyPair>);

MsgType type_of(const Message& m) noexcept;
std::string_view to_string(MsgType t) noexcept;

/// Complete frame including the length prefix.
std::vector<std::uint8_t> encode(const Message& m);
/// Decodes {type}{version}{payload} (a frame without its length prefix).
/// Throws VersionMismatch or ProtocolError.
Message decode_body(std::span<const std::uint8_t> body);
/// Decodes a complete frame; the length must match exactly.
Message decode(std::span<const std::uint8_t> frame);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

} // namespace ppaml::wire
