#include "doctest.h"

#include "ppaml/wire.hpp"

using namespace ppaml;
using namespace ppaml::wire;

namespace {

std::optional<Errc> code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

SessionId fixture_session() {
    SessionId s;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<std::uint8_t>(0xA0 + i);
    return s;
}

struct Fixture {
    SessionId session = fixture_session();
    fhe::KeyPair keys = fhe::keygen(1);
    fhe::EvalContext ctx;
    fhe::Ciphertext c5 = fhe::encrypt(keys.public_key, 5, 6, ctx);
    fhe::Ciphertext c63 = fhe::encrypt(keys.public_key, 63, 6, ctx);
    fhe::Ciphertext cm3 = fhe::encrypt(keys.public_key, -3, 8, ctx, true);
};

// Golden frames, mirrored in docs/protocol.md.
constexpr const char* kKeyId = "72cd0b2474b5f9ca7f7a91e1df05184e";
constexpr const char* kRegister = "0000000a0101060062616e6b2d61";
constexpr const char* kRegisterAck = "0000000e0201060062616e6b2d6101000000";
constexpr const char* kQueryInit =
    "000000270301a0a1a2a3a4a5a6a7a8a9aaabacadaeaf02006d310172cd0b2474b5f9ca7f7a91e1df05184e";
constexpr const char* kQueryForward =
    "0000002c0401a0a1a2a3a4a5a6a7a8a9aaabacadaeaf02006d310172cd0b2474b5f9ca7f7a91e1df05184e0602000000";
constexpr const char* kEncryptedBatch =
    "000000520501a0a1a2a3a4a5a6a7a8a9aaabacadaeaf000000000200000001000000"
    "72cd0b2474b5f9ca7f7a91e1df05184e00060500000000000000"
    "72cd0b2474b5f9ca7f7a91e1df05184e00063f00000000000000";
constexpr const char* kBatchAck = "0000001a0601a0a1a2a3a4a5a6a7a8a9aaabacadaeaf0000000001000000";
constexpr const char* kSubmitDone = "000000160701a0a1a2a3a4a5a6a7a8a9aaabacadaeaf01000000";
constexpr const char* kComputeDone =
    "000000500801a0a1a2a3a4a5a6a7a8a9aaabacadaeaf000000000000e03f000000000000f4bf01000000"
    "060062616e6b2d610000000000000000"
    "72cd0b2474b5f9ca7f7a91e1df05184e0108fdffffffffffffff";
constexpr const char* kError = "0000001e7f01a0a1a2a3a4a5a6a7a8a9aaabacadaeaf100008006e6f206d6f64656c";

void check_golden(const Message& m, const char* hex) {
    CHECK(to_hex(encode(m)) == hex);
    const auto back = decode(from_hex(hex));
    CHECK(back.index() == m.index());
    CHECK(to_hex(encode(back)) == hex);
}

} // namespace

TEST_CASE("wire: secret keys have no encoding") {
    static_assert(WireEncodable<fhe::PublicKey>);
    static_assert(WireEncodable<fhe::Ciphertext>);
    static_assert(WireEncodable<QueryInit>);
    static_assert(!WireEncodable<fhe::SecretKey>);
    static_assert(!WireEncodable<fhe::KeyPair>);
    CHECK(std::variant_size_v<Message> == 9);
}

TEST_CASE("wire: golden frames for every message type") {
    Fixture f;
    CHECK(fhe::to_hex(f.keys.key_id()) == kKeyId);
    check_golden(Register{"bank-a"}, kRegister);
    check_golden(RegisterAck{"bank-a", 1}, kRegisterAck);
    check_golden(QueryInit{f.session, "m1", graphfeat::Tier::SingleHop, f.keys.public_key}, kQueryInit);
    check_golden(QueryForward{f.session, "m1", graphfeat::Tier::SingleHop, f.keys.public_key, 6, 2}, kQueryForward);
    check_golden(EncryptedBatch{f.session, 0, 2, {{f.c5, f.c63}}}, kEncryptedBatch);
    check_golden(BatchAck{f.session, 0, 1}, kBatchAck);
    check_golden(SubmitDone{f.session, 1}, kSubmitDone);
    check_golden(ComputeDone{f.session, 0.5, -1.25, {{"bank-a", 0, 0, f.cm3}}}, kComputeDone);
    check_golden(ErrorMsg{f.session, Errc::UnknownModel, "no model"}, kError);
}

TEST_CASE("wire: decoded fields survive the round-trip") {
    Fixture f;
    const auto fwd = std::get<QueryForward>(decode(from_hex(kQueryForward)));
    CHECK(fwd.session == f.session);
    CHECK(fwd.model_id == "m1");
    CHECK(fwd.tier == graphfeat::Tier::SingleHop);
    CHECK(fwd.public_key == f.keys.public_key);
    CHECK(fwd.n_bits == 6);
    CHECK(fwd.arity == 2);

    const auto batch = std::get<EncryptedBatch>(decode(from_hex(kEncryptedBatch)));
    REQUIRE(batch.rows.size() == 1);
    CHECK(fhe::decrypt(f.keys.secret_key, batch.rows[0][0]) == 5);
    CHECK(fhe::decrypt(f.keys.secret_key, batch.rows[0][1]) == 63);

    const auto done = std::get<ComputeDone>(decode(from_hex(kComputeDone)));
    CHECK(done.leaf_scale == 0.5);
    CHECK(done.margin_offset == -1.25);
    REQUIRE(done.results.size() == 1);
    CHECK(done.results[0].institution_id == "bank-a");
    CHECK(fhe::decrypt(f.keys.secret_key, done.results[0].score) == -3);
    CHECK(done.results[0].score.is_signed());

    const auto err = std::get<ErrorMsg>(decode(from_hex(kError)));
    CHECK(err.code == Errc::UnknownModel);
    CHECK(err.detail == "no model");
}

TEST_CASE("wire: malformed frames") {
    auto frame = from_hex(kSubmitDone);
    auto bumped = frame;
    bumped[5] = 2;
    CHECK(code_of([&] { decode(bumped); }) == Errc::VersionMismatch);

    auto unknown = frame;
    unknown[4] = 0x42;
    CHECK(code_of([&] { decode(unknown); }) == Errc::ProtocolError);

    auto truncated = frame;
    truncated.pop_back();
    CHECK(code_of([&] { decode(truncated); }) == Errc::ProtocolError);
    truncated[3] -= 1;
    CHECK(code_of([&] { decode(truncated); }) == Errc::ProtocolError);

    auto trailing = frame;
    trailing.push_back(0);
    trailing[3] += 1;
    CHECK(code_of([&] { decode(trailing); }) == Errc::ProtocolError);

    auto bad_tier = from_hex(kQueryInit);
    bad_tier[26] = 9; // tier byte after session and "m1"
    CHECK(code_of([&] { decode(bad_tier); }) == Errc::ProtocolError);

    // Declaring more rows than the frame holds is caught before allocation.
    auto huge = from_hex(kEncryptedBatch);
    huge[30] = 0xFF;
    huge[31] = 0xFF;
    CHECK(code_of([&] { decode(huge); }) == Errc::ProtocolError);

    CHECK(code_of([&] { from_hex("abc"); }) == Errc::ProtocolError);
}

TEST_CASE("wire: batch rows must match the declared arity") {
    Fixture f;
    EncryptedBatch b{f.session, 0, 3, {{f.c5, f.c63}}};
    CHECK(code_of([&] { encode(b); }) == Errc::ProtocolError);
}
