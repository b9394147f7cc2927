#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ppaml/fhe.hpp"
#include "ppaml/graphfeat.hpp"
#include "ppaml/net.hpp"
#include "ppaml/quant.hpp"
#include "ppaml/wire.hpp"

namespace ppaml::collab {

struct ModelEntry {
    quant::QuantizedEnsemble model;
    graphfeat::Tier tier = graphfeat::Tier::Basic;
};

using ModelStore = std::map<std::string, ModelEntry>;

/// Tier whose column list equals `feature_names`.
std::optional<graphfeat::Tier> infer_tier(const std::vector<std::string>& feature_names,
                                          const graphfeat::WindowConfig& cfg = {});

/// Every `*.json` quantized model in `dir`, keyed by file stem. The tier is
/// inferred from the model's feature names.
ModelStore load_model_store(const std::filesystem::path& dir, const graphfeat::WindowConfig& cfg = {});

struct ServerConfig {
    net::Endpoint bind{"127.0.0.1", 0};
    /// How long a session waits for participants after the inquiry submits.
    std::chrono::milliseconds session_timeout{10000};
    /// Observes each accepted batch with the submitting institution.
    std::function<void(const std::string&, const wire::EncryptedBatch&)> on_batch;
};

/// Aggregation server: one thread per connection, per-session state behind
/// its own lock. It only ever holds public keys.
class Server {
public:
    explicit Server(ModelStore models, ServerConfig cfg = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    void start();
    void stop();
    /// Blocks until stop() is called from another thread.
    void wait();

    net::Endpoint endpoint() const;
    std::size_t registered_count() const;
    bool wait_for_registrations(std::size_t n, std::chrono::milliseconds timeout) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Locally enriched rows already quantized with the model's parameters.
struct LocalData {
    graphfeat::Tier tier = graphfeat::Tier::Basic;
    QuantMatrix rows;
};

struct ClientConfig {
    std::size_t batch_size = 32;
    int connect_retries = 20;
    std::chrono::milliseconds retry_delay{100};
    std::chrono::milliseconds timeout{60000};
    /// Called with the registration position once the server acknowledges.
    std::function<void(std::uint32_t)> on_registered;
};

struct ParticipateConfig : ClientConfig {
    std::string institution_id = "participant";
    /// Empty accepts the first session; otherwise a model id or session hex.
    std::string session_filter;
};

struct SubmissionReport {
    wire::SessionId session{};
    std::string model_id;
    std::size_t batches = 0;
    std::size_t rows = 0;
    int retries = 0;
    std::vector<std::array<std::uint8_t, fhe::kCiphertextWireSize>> sent; ///< wire bytes, row-major
};

/// Registers, waits for a matching session, and submits encrypted rows.
/// Throws TierMismatch (before encrypting anything) when the session asks
/// for a different tier.
SubmissionReport participate(const net::Endpoint& server, const LocalData& data, const ParticipateConfig& cfg);

struct InquireConfig : ClientConfig {
    std::string institution_id = "inquiry";
    double threshold = 0.5;
    std::optional<wire::SessionId> session; ///< defaults to a fresh random id
};

struct Prediction {
    std::string institution_id;
    std::size_t row_index = 0; ///< position within that institution's submission
    std::int64_t score = 0;
    double margin = 0.0;
    double probability = 0.0;
    bool label = false;
};

struct InquiryResult {
    wire::SessionId session{};
    std::vector<Prediction> predictions; ///< inquiry first, then registration order
};

/// Opens a session, submits `own` rows (if any), then decrypts the results.
InquiryResult inquire(const net::Endpoint& server, const std::string& model_id, graphfeat::Tier tier,
                      const fhe::KeyPair& keys, const LocalData* own, const InquireConfig& cfg);

wire::SessionId random_session_id();

} // namespace ppaml::collab
