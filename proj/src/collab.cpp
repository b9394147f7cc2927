#include "ppaml/collab.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "ppaml/gbt.hpp"

namespace ppaml::collab {

using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

std::optional<graphfeat::Tier> infer_tier(const std::vector<std::string>& names, const graphfeat::WindowConfig& cfg) {
    for (std::size_t t = 0; t < graphfeat::kTierCount; ++t) {
        const auto tier = static_cast<graphfeat::Tier>(t);
        if (graphfeat::column_names(tier, cfg) == names) return tier;
    }
    return std::nullopt;
}

ModelStore load_model_store(const std::filesystem::path& dir, const graphfeat::WindowConfig& cfg) {
    if (!std::filesystem::is_directory(dir)) fail(Errc::InvalidConfig, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    ModelStore store;
    for (const auto& file : files) {
        std::ifstream in(file);
        std::stringstream text;
        text << in.rdbuf();
        auto model = quant::deserialize_quantized(text.str());
        const auto tier = infer_tier(model.quantized.feature_names, cfg);
        if (!tier) fail(Errc::InvalidModel, file.string() + ": feature names match no tier");
        store[file.stem().string()] = {std::move(model.quantized), *tier};
    }
    if (store.empty()) fail(Errc::UnknownModel, "no models in " + dir.string());
    return store;
}

wire::SessionId random_session_id() {
    std::random_device rd;
    wire::SessionId id;
    for (auto& b : id) b = static_cast<std::uint8_t>(rd());
    return id;
}

// ---------------------------------------------------------------------------
// Server

namespace {

struct Peer {
    std::unique_ptr<net::Connection> conn;
    std::string institution;
    bool registered = false;
    std::atomic<bool> gone{false};

    // Failures to reach a peer are reported by its own connection thread.
    void send(const wire::Message& m) noexcept {
        try {
            conn->send(m);
        } catch (const Error&) {
        }
    }
};

struct Submission {
    std::vector<wire::EncryptedBatch> batches;
    bool done = false;
};

struct Session {
    wire::SessionId id{};
    std::string model_id;
    const ModelEntry* model = nullptr;
    fhe::PublicKey public_key;
    std::shared_ptr<fhe::EncryptedEnsemble> plan;
    std::shared_ptr<Peer> inquiry;
    std::vector<std::shared_ptr<Peer>> participants; ///< registration order
    std::map<const Peer*, Submission> submissions;
    bool closed = false;
    std::mutex mutex;
    std::condition_variable changed;

    bool member(const Peer* p) const {
        return p == inquiry.get() ||
               std::any_of(participants.begin(), participants.end(), [&](const auto& q) { return q.get() == p; });
    }
    bool participants_done() const {
        return std::all_of(participants.begin(), participants.end(), [&](const auto& p) {
            if (p->gone) return true;
            const auto it = submissions.find(p.get());
            return it != submissions.end() && it->second.done;
        });
    }
};

wire::ErrorMsg error_msg(const wire::SessionId& s, Errc code, std::string detail) { return {s, code, std::move(detail)}; }

} // namespace

struct Server::Impl {
    ModelStore models;
    ServerConfig cfg;
    std::unique_ptr<net::Listener> listener;
    std::thread acceptor;
    std::vector<std::thread> workers;
    std::vector<std::shared_ptr<Peer>> peers;

    mutable std::mutex mutex;
    mutable std::condition_variable registrations;
    std::vector<std::shared_ptr<Peer>> registered; ///< live, in registration order
    std::map<wire::SessionId, std::shared_ptr<Session>> sessions;
    std::atomic<bool> stopping{false};
    std::condition_variable stopped;
    bool running = false;

    void accept_loop() {
        while (!stopping) {
            auto conn = listener->accept(100ms);
            if (!conn) continue;
            auto peer = std::make_shared<Peer>();
            peer->conn = std::move(conn);
            std::lock_guard lock(mutex);
            peers.push_back(peer);
            workers.emplace_back([this, peer] { serve_peer(peer); });
        }
    }

    std::shared_ptr<Session> find_session(const wire::SessionId& id) {
        std::lock_guard lock(mutex);
        const auto it = sessions.find(id);
        return it == sessions.end() ? nullptr : it->second;
    }

    void serve_peer(const std::shared_ptr<Peer>& peer) {
        while (!stopping) {
            std::optional<wire::Message> msg;
            try {
                msg = peer->conn->receive(200ms);
            } catch (const Error& e) {
                if (e.code() == Errc::TransportError) break;
                peer->send(error_msg({}, e.code(), e.what()));
                continue;
            }
            if (!msg) continue;
            try {
                handle(peer, *msg);
            } catch (const Error& e) {
                peer->send(error_msg({}, e.code(), e.what()));
            }
        }
        disconnect(peer);
    }

    void disconnect(const std::shared_ptr<Peer>& peer) {
        peer->gone = true;
        std::vector<std::shared_ptr<Session>> open;
        {
            std::lock_guard lock(mutex);
            std::erase(registered, peer);
            std::erase(peers, peer);
            for (auto& [id, s] : sessions) open.push_back(s);
        }
        for (auto& s : open) {
            std::lock_guard lock(s->mutex);
            s->changed.notify_all();
        }
        peer->conn->shutdown();
    }

    void handle(const std::shared_ptr<Peer>& peer, const wire::Message& msg) {
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, wire::Register>) {
                    on_register(peer, m);
                } else if constexpr (std::is_same_v<T, wire::QueryInit>) {
                    on_query(peer, m);
                } else if constexpr (std::is_same_v<T, wire::EncryptedBatch>) {
                    on_batch(peer, m);
                } else if constexpr (std::is_same_v<T, wire::SubmitDone>) {
                    on_submit_done(peer, m);
                } else if constexpr (std::is_same_v<T, wire::ErrorMsg>) {
                    on_peer_error(peer, m);
                } else {
                    peer->send(error_msg({}, Errc::ProtocolError,
                                         std::string(wire::to_string(wire::type_of(msg))) + " is not accepted by the server"));
                }
            },
            msg);
    }

    void on_register(const std::shared_ptr<Peer>& peer, const wire::Register& m) {
        std::uint32_t position = 0;
        {
            std::lock_guard lock(mutex);
            if (!peer->registered) {
                peer->registered = true;
                peer->institution = m.institution_id;
                registered.push_back(peer);
            }
            position = static_cast<std::uint32_t>(std::find(registered.begin(), registered.end(), peer) - registered.begin());
        }
        registrations.notify_all();
        peer->send(wire::RegisterAck{peer->institution, position});
    }

    void on_query(const std::shared_ptr<Peer>& peer, const wire::QueryInit& m) {
        const auto it = models.find(m.model_id);
        if (it == models.end()) {
            peer->send(error_msg(m.session, Errc::UnknownModel, "no model '" + m.model_id + "'"));
            return;
        }
        if (it->second.tier != m.tier) {
            peer->send(error_msg(m.session, Errc::TierMismatch,
                                 "model '" + m.model_id + "' uses tier " + std::string(graphfeat::to_string(it->second.tier))));
            return;
        }
        auto s = std::make_shared<Session>();
        s->id = m.session;
        s->model_id = m.model_id;
        s->model = &it->second;
        s->public_key = m.public_key;
        s->plan = std::make_shared<fhe::EncryptedEnsemble>(it->second.model);
        s->inquiry = peer;
        {
            std::lock_guard lock(mutex);
            if (sessions.count(m.session)) {
                peer->send(error_msg(m.session, Errc::ProtocolError, "session id already in use"));
                return;
            }
            for (const auto& p : registered) {
                if (p != peer) s->participants.push_back(p);
            }
            sessions[m.session] = s;
        }
        const wire::QueryForward fwd{m.session, m.model_id, m.tier, m.public_key,
                                     static_cast<std::uint8_t>(it->second.model.n_bits()),
                                     static_cast<std::uint32_t>(it->second.model.arity)};
        peer->send(fwd);
        for (const auto& p : s->participants) p->send(fwd);
    }

    void on_batch(const std::shared_ptr<Peer>& peer, const wire::EncryptedBatch& m) {
        auto s = find_session(m.session);
        if (!s) {
            peer->send(error_msg(m.session, Errc::SessionExpired, "unknown or finished session"));
            return;
        }
        std::unique_lock lock(s->mutex);
        if (s->closed) {
            peer->send(error_msg(m.session, Errc::SessionExpired, "session already computed"));
            return;
        }
        if (!s->member(peer.get())) {
            peer->send(error_msg(m.session, Errc::ProtocolError, "institution is not part of this session"));
            return;
        }
        auto& sub = s->submissions[peer.get()];
        if (sub.done) {
            peer->send(error_msg(m.session, Errc::ProtocolError, "batch after SubmitDone"));
            return;
        }
        const auto& qe = s->model->model;
        if (m.arity != qe.arity) {
            peer->send(error_msg(m.session, Errc::ArityMismatch,
                                 "batch has " + std::to_string(m.arity) + " features, model expects " + std::to_string(qe.arity)));
            return;
        }
        for (const auto& row : m.rows) {
            for (const auto& ct : row) {
                if (ct.key_id() != s->public_key.key_id()) {
                    peer->send(error_msg(m.session, Errc::KeyMismatch, "batch encrypted under a foreign key"));
                    return;
                }
                if (ct.bit_width() != qe.n_bits() || ct.is_signed()) {
                    peer->send(error_msg(m.session, Errc::PrecisionOverflow, "ciphertext width differs from n_bits"));
                    return;
                }
            }
        }
        sub.batches.push_back(m);
        lock.unlock();
        if (cfg.on_batch) cfg.on_batch(peer->institution, m);
        peer->send(wire::BatchAck{m.session, m.batch_seq, static_cast<std::uint32_t>(m.rows.size())});
    }

    void on_peer_error(const std::shared_ptr<Peer>& peer, const wire::ErrorMsg& m) {
        // A participant declining a session counts as an empty submission.
        if (auto s = find_session(m.session)) {
            std::lock_guard lock(s->mutex);
            if (s->member(peer.get())) s->submissions[peer.get()].done = true;
            s->changed.notify_all();
        }
    }

    void on_submit_done(const std::shared_ptr<Peer>& peer, const wire::SubmitDone& m) {
        auto s = find_session(m.session);
        if (!s) {
            peer->send(error_msg(m.session, Errc::SessionExpired, "unknown or finished session"));
            return;
        }
        std::unique_lock lock(s->mutex);
        if (s->closed) {
            peer->send(error_msg(m.session, Errc::SessionExpired, "session already computed"));
            return;
        }
        if (!s->member(peer.get())) {
            peer->send(error_msg(m.session, Errc::ProtocolError, "institution is not part of this session"));
            return;
        }
        s->submissions[peer.get()].done = true;
        s->changed.notify_all();
        if (peer != s->inquiry) return;

        // Stragglers are not waited for past the session timeout.
        s->changed.wait_for(lock, cfg.session_timeout, [&] { return stopping || s->participants_done(); });
        s->closed = true;
        std::vector<std::pair<std::string, std::vector<wire::EncryptedBatch>>> sources;
        sources.emplace_back(s->inquiry->institution, std::move(s->submissions[s->inquiry.get()].batches));
        for (const auto& p : s->participants) {
            auto it = s->submissions.find(p.get());
            if (it != s->submissions.end()) sources.emplace_back(p->institution, std::move(it->second.batches));
        }
        lock.unlock();

        wire::ComputeDone done;
        done.session = s->id;
        done.leaf_scale = s->model->model.leaf_scale;
        done.margin_offset = s->model->model.margin_offset;
        fhe::EvalContext ctx;
        for (auto& [institution, batches] : sources) {
            std::stable_sort(batches.begin(), batches.end(),
                             [](const auto& a, const auto& b) { return a.batch_seq < b.batch_seq; });
            for (const auto& batch : batches) {
                for (std::size_t r = 0; r < batch.rows.size(); ++r) {
                    done.results.push_back({institution, batch.batch_seq, static_cast<std::uint32_t>(r),
                                            s->plan->evaluate(batch.rows[r], s->public_key, ctx)});
                }
            }
        }
        {
            std::lock_guard g(mutex);
            sessions.erase(s->id);
        }
        peer->send(done);
    }
};

Server::Server(ModelStore models, ServerConfig cfg) : impl_(std::make_unique<Impl>()) {
    if (models.empty()) fail(Errc::UnknownModel, "server needs at least one model");
    impl_->models = std::move(models);
    impl_->cfg = std::move(cfg);
}

Server::~Server() { stop(); }

void Server::start() {
    std::lock_guard lock(impl_->mutex);
    if (impl_->running) return;
    impl_->listener = std::make_unique<net::Listener>(impl_->cfg.bind);
    impl_->running = true;
    impl_->acceptor = std::thread([this] { impl_->accept_loop(); });
}

void Server::stop() {
    {
        std::lock_guard lock(impl_->mutex);
        if (!impl_->running) return;
        impl_->running = false;
        impl_->stopping = true;
    }
    impl_->stopped.notify_all();
    if (impl_->acceptor.joinable()) impl_->acceptor.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(impl_->mutex);
        for (auto& p : impl_->peers) p->conn->shutdown();
        for (auto& [id, s] : impl_->sessions) {
            std::lock_guard sl(s->mutex);
            s->changed.notify_all();
        }
        workers = std::move(impl_->workers);
    }
    for (auto& t : workers) t.join();
    impl_->listener->close();
}

void Server::wait() {
    std::unique_lock lock(impl_->mutex);
    impl_->stopped.wait(lock, [&] { return !impl_->running; });
}

net::Endpoint Server::endpoint() const {
    std::lock_guard lock(impl_->mutex);
    return {impl_->cfg.bind.host, impl_->listener ? impl_->listener->port() : impl_->cfg.bind.port};
}

std::size_t Server::registered_count() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->registered.size();
}

bool Server::wait_for_registrations(std::size_t n, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(impl_->mutex);
    return impl_->registrations.wait_for(lock, timeout, [&] { return impl_->registered.size() >= n; });
}

// ---------------------------------------------------------------------------
// Clients

namespace {

/// Next message that is not unsolicited; Error replies become exceptions.
template <class T>
T expect(net::Connection& conn, std::chrono::milliseconds timeout, const char* waiting_for) {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        if (left <= 0ms) fail(Errc::TransportError, std::string("timed out waiting for ") + waiting_for);
        auto msg = conn.receive(left);
        if (!msg) continue;
        if (auto* e = std::get_if<wire::ErrorMsg>(&*msg)) fail(e->code, "server: " + e->detail);
        if (auto* m = std::get_if<T>(&*msg)) return std::move(*m);
        fail(Errc::ProtocolError, std::string("unexpected ") + std::string(wire::to_string(wire::type_of(*msg))) +
                                      " while waiting for " + waiting_for);
    }
}

std::unique_ptr<net::Connection> register_with(const net::Endpoint& server, const std::string& institution,
                                               const ClientConfig& cfg, int* retries) {
    auto conn = net::Connection::open(server, cfg.connect_retries, cfg.retry_delay, retries);
    conn->send(wire::Register{institution});
    const auto ack = expect<wire::RegisterAck>(*conn, cfg.timeout, "RegisterAck");
    if (cfg.on_registered) cfg.on_registered(ack.position);
    return conn;
}

/// Encrypts and submits rows in batches, awaiting each acknowledgement.
std::size_t submit_rows(net::Connection& conn, const wire::QueryForward& fwd, const LocalData& data,
                        const ClientConfig& cfg, SubmissionReport* report) {
    if (data.rows.rows() > 0 && data.rows.cols() != fwd.arity) {
        fail(Errc::ArityMismatch, "local rows have " + std::to_string(data.rows.cols()) + " features, model expects " +
                                      std::to_string(fwd.arity));
    }
    const std::size_t batch_size = std::max<std::size_t>(cfg.batch_size, 1);
    fhe::EvalContext ctx;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.rows.rows(); start += batch_size) {
        wire::EncryptedBatch batch;
        batch.session = fwd.session;
        batch.batch_seq = static_cast<std::uint32_t>(batches);
        batch.arity = fwd.arity;
        for (std::size_t r = start; r < std::min(start + batch_size, data.rows.rows()); ++r) {
            batch.rows.push_back(fhe::encrypt_row(fwd.public_key, data.rows.row(r), fwd.n_bits, ctx));
            if (report) {
                for (const auto& ct : batch.rows.back()) report->sent.push_back(fhe::to_wire(ct));
            }
        }
        conn.send(batch);
        const auto ack = expect<wire::BatchAck>(conn, cfg.timeout, "BatchAck");
        if (ack.batch_seq != batch.batch_seq || ack.rows != batch.rows.size()) {
            fail(Errc::ProtocolError, "acknowledgement does not match the batch");
        }
        ++batches;
    }
    conn.send(wire::SubmitDone{fwd.session, static_cast<std::uint32_t>(batches)});
    return batches;
}

bool matches(const wire::QueryForward& fwd, const std::string& filter) {
    return filter.empty() || filter == fwd.model_id || filter == wire::to_hex(fwd.session);
}

} // namespace

SubmissionReport participate(const net::Endpoint& server, const LocalData& data, const ParticipateConfig& cfg) {
    SubmissionReport report;
    auto conn = register_with(server, cfg.institution_id, cfg, &report.retries);
    for (;;) {
        const auto fwd = expect<wire::QueryForward>(*conn, cfg.timeout, "a session");
        if (!matches(fwd, cfg.session_filter)) {
            conn->send(wire::SubmitDone{fwd.session, 0});
            continue;
        }
        report.session = fwd.session;
        report.model_id = fwd.model_id;
        if (fwd.tier != data.tier) {
            const std::string detail = "session uses tier " + std::string(graphfeat::to_string(fwd.tier)) +
                                       ", local rows are " + std::string(graphfeat::to_string(data.tier));
            conn->send(wire::ErrorMsg{fwd.session, Errc::TierMismatch, detail});
            fail(Errc::TierMismatch, detail);
        }
        report.batches = submit_rows(*conn, fwd, data, cfg, &report);
        report.rows = data.rows.rows();
        return report;
    }
}

InquiryResult inquire(const net::Endpoint& server, const std::string& model_id, graphfeat::Tier tier,
                      const fhe::KeyPair& keys, const LocalData* own, const InquireConfig& cfg) {
    if (own && own->tier != tier) {
        fail(Errc::TierMismatch, "own rows are tier " + std::string(graphfeat::to_string(own->tier)));
    }
    InquiryResult result;
    result.session = cfg.session.value_or(random_session_id());
    auto conn = register_with(server, cfg.institution_id, cfg, nullptr);
    conn->send(wire::QueryInit{result.session, model_id, tier, keys.public_key});
    const auto fwd = expect<wire::QueryForward>(*conn, cfg.timeout, "session acceptance");
    submit_rows(*conn, fwd, own ? *own : LocalData{tier, {}}, cfg, nullptr);
    const auto done = expect<wire::ComputeDone>(*conn, cfg.timeout, "ComputeDone");

    std::map<std::string, std::size_t> next_row;
    for (const auto& e : done.results) {
        Prediction p;
        p.institution_id = e.institution_id;
        p.row_index = next_row[e.institution_id]++;
        p.score = fhe::decrypt(keys.secret_key, e.score);
        p.margin = done.leaf_scale * static_cast<double>(p.score) + done.margin_offset;
        p.probability = gbt::sigmoid(p.margin);
        p.label = p.probability >= cfg.threshold;
        result.predictions.push_back(std::move(p));
    }
    return result;
}

} // namespace ppaml::collab
