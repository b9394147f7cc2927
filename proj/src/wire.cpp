#include "ppaml/wire.hpp"

#include <bit>
#include <cstring>

namespace ppaml::wire {

void Writer::u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void Writer::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void Writer::str(const std::string& s) {
    if (s.size() > 0xFFFF) fail(Errc::ProtocolError, "string longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    raw({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::span<const std::uint8_t> Reader::raw(std::size_t n) {
    if (bytes_.size() - at_ < n) fail(Errc::ProtocolError, "payload truncated");
    auto out = bytes_.subspan(at_, n);
    at_ += n;
    return out;
}
std::uint8_t Reader::u8() { return raw(1)[0]; }
std::uint16_t Reader::u16() {
    auto b = raw(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t Reader::u32() {
    auto b = raw(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}
std::uint64_t Reader::u64() {
    auto b = raw(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}
double Reader::f64() { return std::bit_cast<double>(u64()); }
std::string Reader::str() {
    const auto n = u16();
    auto b = raw(n);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

namespace {

void session(Writer& w, const SessionId& id) { w.raw(id); }
SessionId session(Reader& r) {
    SessionId id;
    auto b = r.raw(id.size());
    std::copy(b.begin(), b.end(), id.begin());
    return id;
}

void tier(Writer& w, graphfeat::Tier t) { w.u8(static_cast<std::uint8_t>(t)); }
graphfeat::Tier tier(Reader& r) {
    const auto v = r.u8();
    if (v >= graphfeat::kTierCount) fail(Errc::ProtocolError, "unknown tier " + std::to_string(v));
    return static_cast<graphfeat::Tier>(v);
}

fhe::PublicKey public_key(Reader& r) {
    fhe::KeyId id;
    auto b = r.raw(id.size());
    std::copy(b.begin(), b.end(), id.begin());
    return fhe::PublicKey(id);
}

fhe::Ciphertext ciphertext(Reader& r) { return fhe::ciphertext_from_wire(r.raw(fhe::kCiphertextWireSize)); }

} // namespace

void encode_payload(Writer& w, const fhe::PublicKey& pk) { w.raw(pk.key_id()); }
void encode_payload(Writer& w, const fhe::Ciphertext& ct) { w.raw(fhe::to_wire(ct)); }

void encode_payload(Writer& w, const Register& m) { w.str(m.institution_id); }

void encode_payload(Writer& w, const RegisterAck& m) {
    w.str(m.institution_id);
    w.u32(m.position);
}

void encode_payload(Writer& w, const QueryInit& m) {
    session(w, m.session);
    w.str(m.model_id);
    tier(w, m.tier);
    encode_payload(w, m.public_key);
}

void encode_payload(Writer& w, const QueryForward& m) {
    session(w, m.session);
    w.str(m.model_id);
    tier(w, m.tier);
    encode_payload(w, m.public_key);
    w.u8(m.n_bits);
    w.u32(m.arity);
}

void encode_payload(Writer& w, const EncryptedBatch& m) {
    session(w, m.session);
    w.u32(m.batch_seq);
    w.u32(m.arity);
    w.u32(static_cast<std::uint32_t>(m.rows.size()));
    for (const auto& row : m.rows) {
        if (row.size() != m.arity) fail(Errc::ProtocolError, "batch row width differs from declared arity");
        for (const auto& ct : row) encode_payload(w, ct);
    }
}

void encode_payload(Writer& w, const BatchAck& m) {
    session(w, m.session);
    w.u32(m.batch_seq);
    w.u32(m.rows);
}

void encode_payload(Writer& w, const SubmitDone& m) {
    session(w, m.session);
    w.u32(m.batches);
}

void encode_payload(Writer& w, const ComputeDone& m) {
    session(w, m.session);
    w.f64(m.leaf_scale);
    w.f64(m.margin_offset);
    w.u32(static_cast<std::uint32_t>(m.results.size()));
    for (const auto& e : m.results) {
        w.str(e.institution_id);
        w.u32(e.batch_seq);
        w.u32(e.row);
        encode_payload(w, e.score);
    }
}

void encode_payload(Writer& w, const ErrorMsg& m) {
    session(w, m.session);
    w.u16(static_cast<std::uint16_t>(m.code));
    w.str(m.detail);
}

MsgType type_of(const Message& m) noexcept {
    static constexpr MsgType kTypes[] = {MsgType::Register,       MsgType::RegisterAck,  MsgType::QueryInit,
                                         MsgType::QueryForward,   MsgType::EncryptedBatch, MsgType::BatchAck,
                                         MsgType::SubmitDone,     MsgType::ComputeDone,  MsgType::Error};
    return kTypes[m.index()];
}

std::string_view to_string(MsgType t) noexcept {
    switch (t) {
    case MsgType::Register: return "Register";
    case MsgType::RegisterAck: return "RegisterAck";
    case MsgType::QueryInit: return "QueryInit";
    case MsgType::QueryForward: return "QueryForward";
    case MsgType::EncryptedBatch: return "EncryptedBatch";
    case MsgType::BatchAck: return "BatchAck";
    case MsgType::SubmitDone: return "SubmitDone";
    case MsgType::ComputeDone: return "ComputeDone";
    case MsgType::Error: return "Error";
    }
    return "Unknown";
}

std::vector<std::uint8_t> encode(const Message& m) {
    Writer w;
    for (int i = 0; i < 4; ++i) w.u8(0);
    w.u8(static_cast<std::uint8_t>(type_of(m)));
    w.u8(kProtocolVersion);
    std::visit([&](const auto& msg) { encode_payload(w, msg); }, m);
    auto& bytes = w.bytes();
    const std::size_t body = bytes.size() - 4;
    if (body > kMaxFrameBytes) fail(Errc::ProtocolError, "frame exceeds the size limit");
    for (int i = 0; i < 4; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(body >> (24 - 8 * i));
    return std::move(bytes);
}

Message decode_body(std::span<const std::uint8_t> body) {
    if (body.size() < 2) fail(Errc::ProtocolError, "frame shorter than its header");
    const auto type = body[0];
    if (body[1] != kProtocolVersion) {
        fail(Errc::VersionMismatch, "protocol version " + std::to_string(body[1]) + ", expected " +
                                        std::to_string(kProtocolVersion));
    }
    Reader r(body.subspan(2));
    Message out;
    switch (static_cast<MsgType>(type)) {
    case MsgType::Register: out = Register{r.str()}; break;
    case MsgType::RegisterAck: {
        RegisterAck m;
        m.institution_id = r.str();
        m.position = r.u32();
        out = m;
        break;
    }
    case MsgType::QueryInit: {
        QueryInit m;
        m.session = session(r);
        m.model_id = r.str();
        m.tier = tier(r);
        m.public_key = public_key(r);
        out = m;
        break;
    }
    case MsgType::QueryForward: {
        QueryForward m;
        m.session = session(r);
        m.model_id = r.str();
        m.tier = tier(r);
        m.public_key = public_key(r);
        m.n_bits = r.u8();
        m.arity = r.u32();
        out = m;
        break;
    }
    case MsgType::EncryptedBatch: {
        EncryptedBatch m;
        m.session = session(r);
        m.batch_seq = r.u32();
        m.arity = r.u32();
        const auto n = r.u32();
        if (static_cast<std::uint64_t>(n) * m.arity * fhe::kCiphertextWireSize > body.size()) {
            fail(Errc::ProtocolError, "batch dimensions exceed the frame");
        }
        m.rows.resize(n);
        for (auto& row : m.rows) {
            row.reserve(m.arity);
            for (std::uint32_t c = 0; c < m.arity; ++c) row.push_back(ciphertext(r));
        }
        out = std::move(m);
        break;
    }
    case MsgType::BatchAck: {
        BatchAck m;
        m.session = session(r);
        m.batch_seq = r.u32();
        m.rows = r.u32();
        out = m;
        break;
    }
    case MsgType::SubmitDone: {
        SubmitDone m;
        m.session = session(r);
        m.batches = r.u32();
        out = m;
        break;
    }
    case MsgType::ComputeDone: {
        ComputeDone m;
        m.session = session(r);
        m.leaf_scale = r.f64();
        m.margin_offset = r.f64();
        const auto n = r.u32();
        if (static_cast<std::uint64_t>(n) * (fhe::kCiphertextWireSize + 10) > body.size()) {
            fail(Errc::ProtocolError, "result count exceeds the frame");
        }
        m.results.resize(n);
        for (auto& e : m.results) {
            e.institution_id = r.str();
            e.batch_seq = r.u32();
            e.row = r.u32();
            e.score = ciphertext(r);
        }
        out = std::move(m);
        break;
    }
    case MsgType::Error: {
        ErrorMsg m;
        m.session = session(r);
        const auto code = r.u16();
        if (code > static_cast<std::uint16_t>(Errc::PipelineError)) fail(Errc::ProtocolError, "unknown error code");
        m.code = static_cast<Errc>(code);
        m.detail = r.str();
        out = m;
        break;
    }
    default: fail(Errc::ProtocolError, "unknown message type " + std::to_string(type));
    }
    if (!r.done()) fail(Errc::ProtocolError, "trailing bytes after " + std::string(to_string(type_of(out))));
    return out;
}

Message decode(std::span<const std::uint8_t> frame) {
    if (frame.size() < 4) fail(Errc::ProtocolError, "frame shorter than its length prefix");
    std::size_t len = 0;
    for (int i = 0; i < 4; ++i) len = (len << 8) | frame[static_cast<std::size_t>(i)];
    if (len != frame.size() - 4) fail(Errc::ProtocolError, "length prefix does not match the frame");
    return decode_body(frame.subspan(4));
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 15]);
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::vector<std::uint8_t> out;
    int hi = -1;
    for (char c : hex) {
        if (c == ' ' || c == '\n') continue;
        const int v = nibble(c);
        if (v < 0) fail(Errc::ProtocolError, "invalid hex digit");
        if (hi < 0) {
            hi = v;
        } else {
            out.push_back(static_cast<std::uint8_t>(hi << 4 | v));
            hi = -1;
        }
    }
    if (hi >= 0) fail(Errc::ProtocolError, "odd number of hex digits");
    return out;
}

} // namespace ppaml::wire
