#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "ppaml/collab.hpp"
#include "ppaml/rng.hpp"

using namespace ppaml;
using namespace ppaml::collab;
using namespace std::chrono_literals;

namespace {

std::optional<Errc> code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

quant::QuantizedModel make_model(std::uint64_t seed, graphfeat::Tier tier = graphfeat::Tier::Basic) {
    const auto names = graphfeat::column_names(tier, {});
    Rng rng(seed);
    FeatureMatrix x(300, names.size());
    std::vector<bool> y;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = rng.uniform(0, 100);
        y.push_back(x(r, 3) + 0.5 * x(r, 0) + 10 * rng.normal() > 75);
    }
    gbt::TrainConfig cfg;
    cfg.n_estimators = 6;
    cfg.max_depth = 3;
    cfg.learning_rate = 0.3;
    cfg.seed = seed;
    auto e = gbt::train(x, y, cfg);
    e.feature_names = names;
    auto qe = quant::quantize_ensemble(e, quant::calibrate(x, 6));
    qe.feature_names = names;
    return {e, qe};
}

LocalData random_rows(std::uint64_t seed, std::size_t n, std::size_t arity, int bits,
                      graphfeat::Tier tier = graphfeat::Tier::Basic) {
    Rng rng(seed);
    LocalData d{tier, QuantMatrix(n, arity)};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < arity; ++c) d.rows(r, c) = static_cast<std::int64_t>(rng.below(1u << bits));
    }
    return d;
}

struct Fixture {
    quant::QuantizedModel model = make_model(1);
    std::unique_ptr<Server> server;

    explicit Fixture(std::chrono::milliseconds timeout = 10s, ServerConfig cfg = {}) {
        cfg.session_timeout = timeout;
        server = std::make_unique<Server>(ModelStore{{"aml", {model.quantized, graphfeat::Tier::Basic}}}, cfg);
        server->start();
    }
    net::Endpoint ep() const { return server->endpoint(); }
    const quant::QuantizedEnsemble& qe() const { return model.quantized; }
};

void check_local_parity(const quant::QuantizedEnsemble& qe, const LocalData& d, const std::vector<Prediction>& preds,
                        std::size_t offset, const std::string& institution) {
    for (std::size_t r = 0; r < d.rows.rows(); ++r) {
        const auto& p = preds.at(offset + r);
        CHECK(p.institution_id == institution);
        CHECK(p.row_index == r);
        const auto local = quant::predict_quantized(qe, d.rows.row(r));
        CHECK(p.score == local.score);
        CHECK(p.probability == local.probability);
        CHECK(p.label == local.label);
    }
}

} // namespace

TEST_CASE("collab: unknown model is rejected") {
    Fixture f;
    const auto keys = fhe::keygen(2);
    CHECK(code_of([&] { inquire(f.ep(), "missing", graphfeat::Tier::Basic, keys, nullptr, {}); }) ==
          Errc::UnknownModel);
    CHECK(code_of([&] { inquire(f.ep(), "aml", graphfeat::Tier::SingleHop, keys, nullptr, {}); }) ==
          Errc::TierMismatch);
}

TEST_CASE("collab: inquiry alone gets its own rows back") {
    Fixture f;
    const auto keys = fhe::keygen(3);
    const auto own = random_rows(3, 12, f.qe().arity, 6);
    InquireConfig cfg;
    cfg.batch_size = 5;
    const auto res = inquire(f.ep(), "aml", graphfeat::Tier::Basic, keys, &own, cfg);
    REQUIRE(res.predictions.size() == 12);
    check_local_parity(f.qe(), own, res.predictions, 0, "inquiry");

    const auto empty = inquire(f.ep(), "aml", graphfeat::Tier::Basic, keys, nullptr, cfg);
    CHECK(empty.predictions.empty());
}

TEST_CASE("collab: two participants with five rows each, in registration order") {
    Fixture f;
    const auto a = random_rows(10, 5, f.qe().arity, 6), b = random_rows(11, 5, f.qe().arity, 6);
    ParticipateConfig pa, pb;
    pa.institution_id = "bank-a";
    pb.institution_id = "bank-b";
    pa.batch_size = pb.batch_size = 2;
    auto fa = std::async(std::launch::async, [&] { return participate(f.ep(), a, pa); });
    REQUIRE(f.server->wait_for_registrations(1, 5s));
    auto fb = std::async(std::launch::async, [&] { return participate(f.ep(), b, pb); });
    REQUIRE(f.server->wait_for_registrations(2, 5s));

    const auto keys = fhe::keygen(4);
    const auto res = inquire(f.ep(), "aml", graphfeat::Tier::Basic, keys, nullptr, {});
    const auto ra = fa.get(), rb = fb.get();
    CHECK(ra.batches == 3);
    CHECK(ra.rows == 5);
    CHECK(ra.session == res.session);
    REQUIRE(res.predictions.size() == 10);
    check_local_parity(f.qe(), a, res.predictions, 0, "bank-a");
    check_local_parity(f.qe(), b, res.predictions, 5, "bank-b");
}

TEST_CASE("collab: empty participant, tier mismatch and a silent participant") {
    Fixture f(400ms);
    const auto own = random_rows(20, 3, f.qe().arity, 6);
    ParticipateConfig pe, pt;
    pe.institution_id = "empty";
    pt.institution_id = "wrong-tier";
    LocalData nothing{graphfeat::Tier::Basic, {}};
    auto mismatched = random_rows(21, 4, f.qe().arity, 6, graphfeat::Tier::MultiHop);
    auto fe = std::async(std::launch::async, [&] { return participate(f.ep(), nothing, pe); });
    auto ft = std::async(std::launch::async, [&] { return code_of([&] { participate(f.ep(), mismatched, pt); }); });
    REQUIRE(f.server->wait_for_registrations(2, 5s));
    // Registers but never answers: the session proceeds after the timeout.
    auto silent = net::Connection::open(f.ep());
    silent->send(wire::Register{"silent"});
    REQUIRE(f.server->wait_for_registrations(3, 5s));

    const auto keys = fhe::keygen(5);
    const auto start = std::chrono::steady_clock::now();
    const auto res = inquire(f.ep(), "aml", graphfeat::Tier::Basic, keys, &own, {});
    CHECK(std::chrono::steady_clock::now() - start >= 350ms);
    const auto re = fe.get();
    CHECK(re.batches == 0);
    CHECK(re.rows == 0);
    CHECK(ft.get() == Errc::TierMismatch);
    REQUIRE(res.predictions.size() == 3);
    check_local_parity(f.qe(), own, res.predictions, 0, "inquiry");
}

TEST_CASE("collab: submitted ciphertexts reach the server byte-identical") {
    std::mutex m;
    std::vector<std::array<std::uint8_t, fhe::kCiphertextWireSize>> seen;
    ServerConfig cfg;
    cfg.on_batch = [&](const std::string& who, const wire::EncryptedBatch& b) {
        if (who != "bank-a") return;
        std::lock_guard lock(m);
        for (const auto& row : b.rows) {
            for (const auto& ct : row) seen.push_back(fhe::to_wire(ct));
        }
    };
    Fixture f(10s, cfg);
    const auto rows = random_rows(30, 100, f.qe().arity, 6);
    ParticipateConfig pc;
    pc.institution_id = "bank-a";
    auto fut = std::async(std::launch::async, [&] { return participate(f.ep(), rows, pc); });
    REQUIRE(f.server->wait_for_registrations(1, 5s));
    const auto res = inquire(f.ep(), "aml", graphfeat::Tier::Basic, fhe::keygen(6), nullptr, {});
    const auto report = fut.get();
    CHECK(report.sent.size() == 100 * f.qe().arity);
    std::lock_guard lock(m);
    CHECK(seen == report.sent);
    CHECK(res.predictions.size() == 100);
}

TEST_CASE("collab: stale sessions and protocol errors") {
    Fixture f;
    auto conn = net::Connection::open(f.ep());
    conn->send(wire::SubmitDone{random_session_id(), 0});
    auto reply = conn->receive(5s);
    REQUIRE(reply);
    CHECK(std::get<wire::ErrorMsg>(*reply).code == Errc::SessionExpired);

    // A finished session is gone for good.
    const auto keys = fhe::keygen(7);
    const auto own = random_rows(7, 2, f.qe().arity, 6);
    const auto res = inquire(f.ep(), "aml", graphfeat::Tier::Basic, keys, &own, {});
    fhe::EvalContext ctx;
    wire::EncryptedBatch late{res.session, 9, static_cast<std::uint32_t>(f.qe().arity),
                              {fhe::encrypt_row(keys.public_key, own.rows.row(0), 6, ctx)}};
    conn->send(late);
    reply = conn->receive(5s);
    REQUIRE(reply);
    CHECK(std::get<wire::ErrorMsg>(*reply).code == Errc::SessionExpired);

    CHECK(res.predictions.size() == 2);

    auto frame = wire::encode(wire::Register{"x"});
    frame[5] = 7;
    conn->send_frame(frame);
    reply = conn->receive(5s);
    REQUIRE(reply);
    CHECK(std::get<wire::ErrorMsg>(*reply).code == Errc::VersionMismatch);

    conn->send(wire::BatchAck{});
    reply = conn->receive(5s);
    REQUIRE(reply);
    CHECK(std::get<wire::ErrorMsg>(*reply).code == Errc::ProtocolError);
}

TEST_CASE("collab: foreign-key ciphertexts are rejected") {
    Fixture f;
    auto conn = net::Connection::open(f.ep());
    conn->send(wire::Register{"inq"});
    REQUIRE(conn->receive(5s));
    const auto keys = fhe::keygen(8), other = fhe::keygen(9);
    const auto sid = random_session_id();
    conn->send(wire::QueryInit{sid, "aml", graphfeat::Tier::Basic, keys.public_key});
    auto fwd = conn->receive(5s);
    REQUIRE(fwd);
    REQUIRE(std::holds_alternative<wire::QueryForward>(*fwd));
    fhe::EvalContext ctx;
    const std::vector<std::int64_t> row(f.qe().arity, 1);
    conn->send(wire::EncryptedBatch{sid, 0, static_cast<std::uint32_t>(row.size()),
                                    {fhe::encrypt_row(other.public_key, row, 6, ctx)}});
    auto reply = conn->receive(5s);
    REQUIRE(reply);
    CHECK(std::get<wire::ErrorMsg>(*reply).code == Errc::KeyMismatch);
}

TEST_CASE("collab: model store loads quantized models by file stem") {
    const auto dir = std::filesystem::temp_directory_path() / "ppaml_models_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "basic.json");
        out << quant::serialize(make_model(40));
    }
    {
        std::ofstream out(dir / "single.json");
        out << quant::serialize(make_model(41, graphfeat::Tier::SingleHop));
    }
    const auto store = load_model_store(dir);
    REQUIRE(store.size() == 2);
    CHECK(store.at("basic").tier == graphfeat::Tier::Basic);
    CHECK(store.at("single").tier == graphfeat::Tier::SingleHop);
    std::filesystem::remove_all(dir);
    CHECK(code_of([&] { load_model_store(dir); }) == Errc::InvalidConfig);
}
