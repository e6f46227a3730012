#include "namac/gateway.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "namac/errors.hpp"
#include "namac/util.hpp"

namespace namac {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- bundle ----------------------------------------------------------------

void TwinBundle::check(const PlantConfig& config) const {
    const std::string h = config.hash();
    if (config_hash != h)
        throw BundleMismatch("bundle was built for plant config " + config_hash + ", scenario plant is " + h);
    if (diagnosis && diagnosis_record.config_hash != h)
        throw BundleMismatch("diagnosis twin was trained on data from plant config " + diagnosis_record.config_hash);
    if (prognosis && prognosis_record.config_hash != h)
        throw BundleMismatch("prognosis twin was trained on data from plant config " + prognosis_record.config_hash);
}

TwinSet TwinBundle::twins() const {
    if (!complete()) throw BundleMismatch("bundle needs both a diagnosis and a prognosis twin");
    return {*diagnosis, *prognosis, bounds, safety_limit, grid_n};
}

namespace {

json record_json(const TwinRecord& r) {
    return {{"config_hash", r.config_hash}, {"target_mse", r.target_mse},   {"epochs", r.epochs},
            {"reached_target", r.reached_target}, {"rmse_train", r.rmse_train}, {"rmse_test", r.rmse_test}};
}

TwinRecord record_from(const json& j) {
    return {j.at("config_hash").get<std::string>(), j.at("target_mse").get<double>(), j.at("epochs").get<std::size_t>(),
            j.at("reached_target").get<bool>(),     j.at("rmse_train").get<double>(), j.at("rmse_test").get<double>()};
}

}  // namespace

void save_bundle(const TwinBundle& b, const std::string& dir) {
    fs::create_directories(dir);
    json j{{"format", "namac-bundle v1"},
           {"config_hash", b.config_hash},
           {"bounds", {{"w2_min", b.bounds.w2_min}, {"w2_max", b.bounds.w2_max},
                       {"trip_min", b.bounds.trip_min}, {"trip_max", b.bounds.trip_max}}},
           {"safety_limit", b.safety_limit},
           {"grid_n", b.grid_n}};
    if (b.diagnosis) {
        save_model_file((fs::path(dir) / "diagnosis.nn").string(), *b.diagnosis);
        j["diagnosis"] = record_json(b.diagnosis_record);
    }
    if (b.prognosis) {
        save_model_file((fs::path(dir) / "prognosis.nn").string(), *b.prognosis);
        j["prognosis"] = record_json(b.prognosis_record);
    }
    std::ofstream out(fs::path(dir) / "bundle.json");
    if (!out) throw BundleMismatch("cannot write bundle in " + dir);
    out << j.dump(2) << '\n';
}

TwinBundle load_bundle(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "bundle.json");
    if (!in) throw BundleMismatch("no bundle.json in " + dir);
    TwinBundle b;
    try {
        const json j = json::parse(in);
        if (j.at("format").get<std::string>() != "namac-bundle v1") throw BundleMismatch("unknown bundle format");
        b.config_hash = j.at("config_hash").get<std::string>();
        const auto& bo = j.at("bounds");
        b.bounds = {bo.at("w2_min").get<double>(), bo.at("w2_max").get<double>(), bo.at("trip_min").get<double>(),
                    bo.at("trip_max").get<double>()};
        b.safety_limit = j.at("safety_limit").get<double>();
        b.grid_n = j.at("grid_n").get<std::size_t>();
        if (j.contains("diagnosis")) {
            b.diagnosis = load_model_file((fs::path(dir) / "diagnosis.nn").string());
            b.diagnosis_record = record_from(j.at("diagnosis"));
        }
        if (j.contains("prognosis")) {
            b.prognosis = load_model_file((fs::path(dir) / "prognosis.nn").string());
            b.prognosis_record = record_from(j.at("prognosis"));
        }
    } catch (const json::exception& e) {
        throw BundleMismatch(std::string("malformed bundle.json: ") + e.what());
    }
    return b;
}

// ---- session ---------------------------------------------------------------

const char* command_name(CommandKind k) {
    switch (k) {
        case CommandKind::Accept: return "accept";
        case CommandKind::Reject: return "reject";
        case CommandKind::Scram: return "scram";
        case CommandKind::Pause: return "pause";
        case CommandKind::Resume: return "resume";
        case CommandKind::SetSpeed: return "set-speed";
    }
    return "?";
}

CommandKind parse_command(const std::string& text) {
    for (auto k : {CommandKind::Accept, CommandKind::Reject, CommandKind::Scram, CommandKind::Pause,
                   CommandKind::Resume, CommandKind::SetSpeed})
        if (text == command_name(k)) return k;
    throw InvalidConfig("unknown command '" + text + "'");
}

std::string Message::to_line() const { return json{{"type", type}, {"seq", seq}, {"payload", payload}}.dump(); }

Session::Session(PlantConfig config, ScenarioSpec scenario, TwinSet twins, RunOptions options,
                 SessionSettings settings)
    : settings_(std::move(settings)) {
    if (!(settings_.snapshot_interval > 0.0)) throw InvalidConfig("snapshot interval must be > 0");
    if (settings_.speed < 0.0) throw InvalidConfig("speed must be >= 0");
    loop_ = std::make_unique<ClosedLoop>(std::move(config), scenario, std::move(twins), std::move(options));
    running_ = settings_.start_running;
    speed_ = settings_.speed;
    next_snapshot_ = loop_->plant().t;
    std::lock_guard lock(mutex_);
    publish_new_events();
    publish("snapshot", snapshot_locked());
    next_snapshot_ += settings_.snapshot_interval;
}

Session::~Session() { stop(); }

void Session::start() {
    if (worker_.joinable()) return;
    stop_ = false;
    worker_ = std::thread([this] { loop(); });
}

void Session::stop() {
    stop_ = true;
    changed_.notify_all();
    if (worker_.joinable()) worker_.join();
    std::lock_guard lock(mutex_);
    for (auto& p : queue_) p.done.set_value({false, "session stopped", phase_name(loop_->phase())});
    queue_.clear();
}

void Session::publish(const std::string& type, json payload) {
    messages_.push_back({next_seq_++, type, std::move(payload)});
    if (messages_.size() > settings_.max_messages) messages_.erase(messages_.begin());
    changed_.notify_all();
}

void Session::publish_new_events() {
    const auto& events = loop_->log().events;
    for (; events_published_ < events.size(); ++events_published_) {
        const auto& e = events[events_published_];
        if (e.type == "frame") continue;
        publish(e.type, {{"t", e.t}, {"event_seq", e.seq}, {"data", e.payload}});
    }
}

json Session::snapshot_locked() const {
    const auto& s = loop_->plant();
    const auto& f = loop_->last_frame();
    json sensors = json::object();
    for (auto c : kAllChannels)
        sensors[channel_name(c)] = f.is_valid(c) ? json(f.value(c)) : json(nullptr);
    return {{"t", s.t},
            {"phase", phase_name(loop_->phase())},
            {"running", running_},
            {"speed", speed_},
            {"w1", s.w1},
            {"w2", s.w2},
            {"power", s.power},
            {"sensors", sensors},
            {"T_PFCL_diag", loop_->diagnosed()},
            {"T_PFCL_true", s.t_pfcl},
            {"scram_latched", s.scram_latched},
            {"has_recommendation", loop_->recommendation().has_value() && loop_->awaiting_decision()}};
}

json Session::snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_locked();
}

json Session::descriptor() const {
    std::lock_guard lock(mutex_);
    const auto& o = loop_->options();
    const auto& sc = loop_->scenario();
    return {{"id", settings_.id},
            {"phase", phase_name(loop_->phase())},
            {"policy", "operator"},
            {"scenario", {{"w1_end", sc.w1_end}, {"T_1", sc.ramp_duration}, {"t_acc", sc.accident_time},
                          {"m", sc.coastdown_rate}}},
            {"timeline", {{"t_w", o.timeline.t_w}, {"t_acc", o.timeline.t_acc}, {"t_D", o.timeline.t_d},
                          {"t_rcmd", o.timeline.t_rcmd()}, {"t_end", o.timeline.t_end()},
                          {"t_1", loop_->injection_time() ? json(*loop_->injection_time()) : json(nullptr)}}},
            {"discrepancy", {{"enabled", o.discrepancy.enabled}, {"X_lim", o.discrepancy.x_lim}}},
            {"snapshot", snapshot_locked()}};
}

json Session::recommendation() const {
    std::lock_guard lock(mutex_);
    const auto& r = loop_->recommendation();
    const auto& t = loop_->margin_table();
    if (!r || !t) return nullptr;
    json rows = json::array();
    for (const auto& row : t->rows)
        rows.push_back({row.action.w2_end, row.action.t_trip, row.predicted, row.margin, row.safe});
    return {{"active", loop_->awaiting_decision()},
            {"decision", r->is_scram() ? "scram" : "act"},
            {"action", {{"w2_end", r->action.w2_end}, {"T_trip", r->action.t_trip}}},
            {"immediate", r->immediate},
            {"margin", r->margin},
            {"predicted", r->predicted},
            {"rationale", r->rationale},
            {"table", {{"limit", t->limit},
                       {"n_w2", t->n_w2},
                       {"n_trip", t->n_trip},
                       {"columns", {"w2_end", "T_trip", "predicted", "margin", "safe"}},
                       {"rows", rows}}}};
}

std::string Session::transcript() const {
    std::lock_guard lock(mutex_);
    return loop_->log().to_ndjson();
}

bool Session::terminated() const {
    std::lock_guard lock(mutex_);
    return loop_->finished();
}

std::vector<Message> Session::messages_since(std::uint64_t from, std::chrono::milliseconds wait) const {
    std::unique_lock lock(mutex_);
    auto available = [&] { return next_seq_ > from || loop_->finished(); };
    if (!available()) changed_.wait_for(lock, wait, available);
    std::vector<Message> out;
    for (const auto& m : messages_)
        if (m.seq >= from) out.push_back(m);
    return out;
}

bool Session::wait_for_phase(Phase phase, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    return changed_.wait_for(lock, timeout, [&] { return loop_->phase() == phase || loop_->finished(); }) &&
           loop_->phase() == phase;
}

CommandResult Session::submit(const Command& command, std::chrono::milliseconds timeout) {
    std::future<CommandResult> f;
    {
        std::lock_guard lock(mutex_);
        if (!worker_.joinable()) return apply(command);
        queue_.push_back({command, {}});
        f = queue_.back().done.get_future();
    }
    changed_.notify_all();
    if (f.wait_for(timeout) != std::future_status::ready) return {false, "timed out waiting for the session", ""};
    return f.get();
}

CommandResult Session::apply(const Command& c) {
    CommandResult r;
    auto fail = [&](std::string why) {
        r.ok = false;
        r.error = std::move(why);
        r.phase = phase_name(loop_->phase());
        publish("command", {{"command", command_name(c.kind)}, {"ok", false}, {"error", r.error}});
        return r;
    };
    if (loop_->finished() && c.kind != CommandKind::SetSpeed) return fail("session has terminated");
    switch (c.kind) {
        case CommandKind::Accept:
        case CommandKind::Reject:
            if (!loop_->awaiting_decision()) return fail("no decision is pending");
            loop_->decide(c.kind == CommandKind::Accept ? Decision::Accept : Decision::Reject, "operator");
            break;
        case CommandKind::Scram: loop_->operator_scram("operator"); break;
        case CommandKind::Pause: running_ = false; break;
        case CommandKind::Resume: running_ = true; break;
        case CommandKind::SetSpeed:
            if (!(c.value >= 0.0) || !std::isfinite(c.value)) return fail("speed must be a finite value >= 0");
            speed_ = c.value;
            break;
    }
    r.ok = true;
    r.phase = phase_name(loop_->phase());
    publish_new_events();
    publish("command", {{"command", command_name(c.kind)}, {"ok", true}, {"phase", r.phase}});
    publish("snapshot", snapshot_locked());
    return r;
}

void Session::loop() {
    using clock = std::chrono::steady_clock;
    while (!stop_) {
        std::unique_lock lock(mutex_);
        while (!queue_.empty()) {
            Pending p = std::move(queue_.front());
            queue_.pop_front();
            try {
                p.done.set_value(apply(p.command));
            } catch (const std::exception& e) {
                p.done.set_value({false, e.what(), phase_name(loop_->phase())});
            }
        }
        const bool can_step = running_ && !loop_->awaiting_decision() && !loop_->finished();
        if (!can_step) {
            changed_.wait_for(lock, std::chrono::milliseconds(50), [&] { return stop_ || !queue_.empty(); });
            continue;
        }
        const auto began = clock::now();
        const Phase before = loop_->phase();
        try {
            loop_->advance();
        } catch (const std::exception& e) {
            publish("error", {{"message", e.what()}});
            running_ = false;
            continue;
        }
        publish_new_events();
        const bool phase_changed = loop_->phase() != before;
        if (loop_->plant().t >= next_snapshot_ - 1e-9 || phase_changed || loop_->finished()) {
            publish("snapshot", snapshot_locked());
            while (next_snapshot_ <= loop_->plant().t + 1e-9) next_snapshot_ += settings_.snapshot_interval;
        }
        const double speed = speed_;
        lock.unlock();
        if (speed > 0.0) {
            const auto budget = std::chrono::duration<double>(0.1 / speed);
            std::this_thread::sleep_until(began + std::chrono::duration_cast<clock::duration>(budget));
        }
    }
}

// ---- http ------------------------------------------------------------------

struct SessionServer::Impl {
    Session& session;
    httplib::Server server;
    std::thread thread;

    explicit Impl(Session& s) : session(s) {}
};

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

}  // namespace

SessionServer::SessionServer(Session& session) : impl_(std::make_unique<Impl>(session)) {
    auto& srv = impl_->server;
    Session* s = &session;
    srv.Get("/api/session", [s](const httplib::Request&, httplib::Response& res) { send_json(res, s->descriptor()); });
    srv.Get("/api/recommendation", [s](const httplib::Request&, httplib::Response& res) {
        const json r = s->recommendation();
        if (r.is_null()) {
            send_json(res, {{"error", "no recommendation yet"}}, 404);
            return;
        }
        send_json(res, r);
    });
    srv.Get("/api/transcript", [s](const httplib::Request&, httplib::Response& res) {
        res.set_content(s->transcript(), "application/x-ndjson");
    });
    srv.Post("/api/command", [s](const httplib::Request& req, httplib::Response& res) {
        Command c;
        try {
            const json body = json::parse(req.body);
            c.kind = parse_command(body.at("command").get<std::string>());
            if (c.kind == CommandKind::SetSpeed) c.value = body.at("value").get<double>();
        } catch (const std::exception& e) {
            send_json(res, {{"ok", false}, {"error", std::string("bad command: ") + e.what()}}, 400);
            return;
        }
        const CommandResult r = s->submit(c);
        send_json(res, {{"ok", r.ok}, {"error", r.error}, {"phase", r.phase}}, r.ok ? 200 : 409);
    });
    srv.Get("/api/stream", [s](const httplib::Request& req, httplib::Response& res) {
        auto cursor = std::make_shared<std::uint64_t>(0);
        if (req.has_param("from")) *cursor = std::stoull(req.get_param_value("from"));
        res.set_chunked_content_provider("application/x-ndjson", [s, cursor](std::size_t, httplib::DataSink& sink) {
            const auto batch = s->messages_since(*cursor, std::chrono::milliseconds(200));
            for (const auto& m : batch) {
                const std::string line = m.to_line() + "\n";
                if (!sink.write(line.data(), line.size())) return false;
                *cursor = m.seq + 1;
            }
            if (batch.empty() && s->terminated()) sink.done();
            return true;
        });
    });
}

SessionServer::~SessionServer() { stop(); }

int SessionServer::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw InvalidConfig("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return bound;
}

void SessionServer::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw InvalidConfig("cannot listen on " + host + ":" + std::to_string(port));
}

void SessionServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace namac
