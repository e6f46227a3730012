#pragma once

// Service surface: twin bundles on disk, the operator session (one plant, one
// loop, a single-consumer command queue, an append-only message feed) and its
// HTTP front end.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "namac/plant.hpp"
#include "namac/twins.hpp"
#include "namac/workflow.hpp"

namespace namac {

// ---- bundle ----------------------------------------------------------------

struct TwinRecord {
    std::string config_hash;
    double target_mse = 0.0;
    std::size_t epochs = 0;
    bool reached_target = false;
    double rmse_train = 0.0;
    double rmse_test = 0.0;
};

struct TwinBundle {
    std::string config_hash;
    ActionBounds bounds;
    double safety_limit = 685.0;
    std::size_t grid_n = 32;
    std::optional<NeuralNetModel> diagnosis;
    std::optional<NeuralNetModel> prognosis;
    TwinRecord diagnosis_record;
    TwinRecord prognosis_record;

    [[nodiscard]] bool complete() const { return diagnosis && prognosis; }
    /// BundleMismatch when the bundle or either twin was built for another plant.
    void check(const PlantConfig& config) const;
    [[nodiscard]] TwinSet twins() const;
};

/// bundle.json plus diagnosis.nn / prognosis.nn in `dir`.
void save_bundle(const TwinBundle& bundle, const std::string& dir);
TwinBundle load_bundle(const std::string& dir);

// ---- session ---------------------------------------------------------------

enum class CommandKind { Accept, Reject, Scram, Pause, Resume, SetSpeed };
const char* command_name(CommandKind k);
CommandKind parse_command(const std::string& text);

struct Command {
    CommandKind kind = CommandKind::Pause;
    double value = 0.0;  // set-speed: plant seconds per wall second, 0 = unthrottled
};

struct CommandResult {
    bool ok = false;
    std::string error;
    std::string phase;
};

struct Message {
    std::uint64_t seq = 0;
    std::string type;
    nlohmann::json payload;

    [[nodiscard]] std::string to_line() const;
};

struct SessionSettings {
    std::string id = "session-1";
    double speed = 0.0;              // plant seconds per wall second; 0 = unthrottled
    double snapshot_interval = 0.2;  // s of plant time
    bool start_running = true;
    std::size_t max_messages = 100000;
};

/// One closed loop under operator gating. The loop runs on its own thread;
/// everything else talks to it through the command queue or reads copies.
class Session {
public:
    Session(PlantConfig config, ScenarioSpec scenario, TwinSet twins, RunOptions options, SessionSettings settings);
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    void start();
    void stop();

    /// Enqueues and waits for the loop thread to apply it.
    CommandResult submit(const Command& command, std::chrono::milliseconds timeout = std::chrono::seconds(10));

    [[nodiscard]] nlohmann::json descriptor() const;
    [[nodiscard]] nlohmann::json snapshot() const;
    /// Recommendation with the full margin table; null when none is active.
    [[nodiscard]] nlohmann::json recommendation() const;
    [[nodiscard]] std::string transcript() const;
    [[nodiscard]] bool terminated() const;

    /// Messages with seq >= from; blocks up to `wait` when none are available.
    std::vector<Message> messages_since(std::uint64_t from, std::chrono::milliseconds wait) const;

    /// Blocks until the loop reaches the phase or terminates.
    bool wait_for_phase(Phase phase, std::chrono::milliseconds timeout) const;

private:
    struct Pending {
        Command command;
        std::promise<CommandResult> done;
    };

    void loop();
    CommandResult apply(const Command& c);
    void publish(const std::string& type, nlohmann::json payload);
    void publish_new_events();
    nlohmann::json snapshot_locked() const;

    SessionSettings settings_;
    std::unique_ptr<ClosedLoop> loop_;
    std::string scenario_label_;

    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::deque<Pending> queue_;
    std::vector<Message> messages_;
    std::uint64_t next_seq_ = 0;
    std::size_t events_published_ = 0;
    double next_snapshot_ = 0.0;
    bool running_ = true;
    double speed_ = 0.0;
    std::atomic<bool> stop_{false};
    std::thread worker_;
};

// ---- http ------------------------------------------------------------------

/// REST + streaming front end:
///   GET  /api/session         descriptor and current snapshot
///   GET  /api/recommendation  active recommendation and margin table
///   POST /api/command         {"command": "...", "value": x}
///   GET  /api/transcript      line-delimited transcript
///   GET  /api/stream?from=N   chunked line-delimited {type, seq, payload}
class SessionServer {
public:
    explicit SessionServer(Session& session);
    ~SessionServer();

    /// Binds and serves on a background thread; returns the bound port.
    int start(const std::string& host, int port);
    void stop();
    /// Serves on the calling thread until stop().
    void run(const std::string& host, int port);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace namac
