#include <filesystem>
#include <random>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "namac/errors.hpp"
#include "namac/gateway.hpp"
#include "support.hpp"

using namespace namac;
using namac::testing::small_world;
using nlohmann::json;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

SessionSettings fast(bool running = true) {
    SessionSettings s;
    s.speed = 0.0;
    s.start_running = running;
    return s;
}

std::unique_ptr<Session> table2_session(bool running = true) {
    const auto& w = small_world();
    return std::make_unique<Session>(w.config, table2_scenario(w.config), w.twins, RunOptions{}, fast(running));
}

int phase_rank(const std::string& p) {
    if (p == "steady") return 0;
    if (p == "transient") return 1;
    if (p == "paused-awaiting-decision") return 2;
    if (p == "post-action") return 3;
    return 4;
}

}  // namespace

TEST_CASE("bundle round trip and config guard") {
    const auto& w = small_world();
    TwinBundle b;
    b.config_hash = w.config.hash();
    b.bounds = w.twins.bounds;
    b.diagnosis = w.twins.diagnosis;
    b.prognosis = w.twins.prognosis;
    b.diagnosis_record = {w.config.hash(), 1e-2, 12, true, 1.5, 1.6};
    b.prognosis_record = {w.config.hash(), 1e-3, 40, true, 0.4, 0.5};
    const fs::path dir = fs::temp_directory_path() / "namac_test_bundle";
    fs::remove_all(dir);
    save_bundle(b, dir.string());
    const TwinBundle back = load_bundle(dir.string());
    CHECK(back.complete());
    CHECK(*back.diagnosis == *b.diagnosis);
    CHECK(*back.prognosis == *b.prognosis);
    CHECK(back.diagnosis_record.epochs == 12);
    CHECK(back.bounds.trip_min == b.bounds.trip_min);
    back.check(w.config);

    PlantConfig other = w.config;
    other.ihx_conductance *= 1.1;
    CHECK_THROWS_AS(back.check(other), BundleMismatch);

    TwinBundle half = b;
    half.prognosis.reset();
    CHECK_FALSE(half.complete());
    CHECK_THROWS_AS(half.twins(), BundleMismatch);
    CHECK_THROWS_AS(load_bundle((dir / "nope").string()), BundleMismatch);
    fs::remove_all(dir);
}

TEST_CASE("command names") {
    CHECK(parse_command("set-speed") == CommandKind::SetSpeed);
    CHECK(std::string(command_name(CommandKind::Accept)) == "accept");
    CHECK_THROWS_AS(parse_command("launch"), InvalidConfig);
}

TEST_CASE("paused session exposes the recommendation and its table") {
    auto s = table2_session();
    s->start();
    REQUIRE(s->wait_for_phase(Phase::Paused, 30s));
    const json snap = s->snapshot();
    CHECK(snap.at("phase") == "paused-awaiting-decision");
    CHECK(snap.at("has_recommendation") == true);
    CHECK(snap.at("t").get<double>() == doctest::Approx(10020.0));
    const json rec = s->recommendation();
    REQUIRE_FALSE(rec.is_null());
    CHECK(rec.at("active") == true);
    CHECK(rec.at("table").at("rows").size() == 1024);
    CHECK(s->descriptor().at("timeline").at("t_rcmd").get<double>() == 10020.0);
    s->stop();
}

TEST_CASE("accept injects exactly the recommended action") {
    const auto& w = small_world();
    auto s = table2_session();
    s->start();
    REQUIRE(s->wait_for_phase(Phase::Paused, 30s));
    const json rec = s->recommendation();
    const CommandResult r = s->submit({CommandKind::Accept, 0.0});
    CHECK(r.ok);
    CHECK(r.phase == "post-action");
    for (int i = 0; i < 600 && !s->terminated(); ++i) std::this_thread::sleep_for(50ms);
    REQUIRE(s->terminated());
    const TranscriptLog log = TranscriptLog::from_ndjson(s->transcript());
    const Outcome o = outcome_of(log);
    REQUIRE(o.injected.has_value());
    CHECK(o.injected->w2_end == rec.at("action").at("w2_end").get<double>());
    CHECK(o.injected->t_trip == rec.at("action").at("T_trip").get<double>());

    const TranscriptLog auto_log =
        run_closed_loop(w.config, table2_scenario(w.config), w.twins, Policy::AutoAccept, RunOptions{});
    CHECK(outcome_of(auto_log).injected == o.injected);
    CHECK(outcome_of(auto_log).max_true_t_pfcl == o.max_true_t_pfcl);
    CHECK(replay_closed_loop(log, w.config, w.twins).hash() == log.hash());
    s->stop();
}

TEST_CASE("scram latches immediately") {
    auto s = table2_session(false);
    s->start();
    const CommandResult r = s->submit({CommandKind::Scram, 0.0});
    CHECK(r.ok);
    CHECK(r.phase == "terminated");
    CHECK(s->snapshot().at("scram_latched") == true);
    const TranscriptLog log = TranscriptLog::from_ndjson(s->transcript());
    const auto* scram = log.find("scram");
    REQUIRE(scram);
    CHECK(scram->t == doctest::Approx(10000.0));
    CHECK(scram->payload.at("manual") == true);
    CHECK_FALSE(s->submit({CommandKind::Resume, 0.0}).ok);
    s->stop();
}

TEST_CASE("invalid commands are refused without side effects") {
    auto s = table2_session(false);
    s->start();
    const json before = s->snapshot();
    CommandResult r = s->submit({CommandKind::Accept, 0.0});
    CHECK_FALSE(r.ok);
    CHECK(r.error == "no decision is pending");
    r = s->submit({CommandKind::SetSpeed, -3.0});
    CHECK_FALSE(r.ok);
    CHECK(s->snapshot() == before);
    CHECK(s->submit({CommandKind::SetSpeed, 50.0}).ok);
    CHECK(s->snapshot().at("speed") == 50.0);
    s->stop();
}

TEST_CASE("concurrent command storms keep the phase sequence consistent") {
    for (int round = 0; round < 3; ++round) {
        auto s = table2_session();
        s->start();
        std::vector<std::thread> clients;
        for (int c = 0; c < 4; ++c)
            clients.emplace_back([&, c] {
                std::mt19937_64 rng(static_cast<std::uint64_t>(round * 10 + c));
                const CommandKind kinds[] = {CommandKind::Accept, CommandKind::Reject, CommandKind::Pause,
                                             CommandKind::Resume, CommandKind::SetSpeed, CommandKind::Resume};
                for (int k = 0; k < 40; ++k) {
                    const CommandKind kind = kinds[rng() % 6];
                    s->submit({kind, 0.0});
                    std::this_thread::sleep_for(std::chrono::microseconds(rng() % 2000));
                }
            });
        for (auto& t : clients) t.join();
        s->submit({CommandKind::Resume, 0.0});
        for (int i = 0; i < 600 && !s->terminated(); ++i) {
            if (s->snapshot().at("phase") == "paused-awaiting-decision") s->submit({CommandKind::Reject, 0.0});
            std::this_thread::sleep_for(20ms);
        }
        REQUIRE(s->terminated());
        const TranscriptLog log = TranscriptLog::from_ndjson(s->transcript());
        CHECK(log.count("decision") == 1);
        CHECK(log.count("outcome") == 1);
        int last = 0;
        for (const auto& m : s->messages_since(0, 0ms)) {
            if (m.type != "snapshot") continue;
            const int rank = phase_rank(m.payload.at("phase").get<std::string>());
            CHECK(rank >= last);
            last = rank;
        }
        s->stop();
    }
}

TEST_CASE("message feed") {
    auto s = table2_session();
    s->start();
    REQUIRE(s->wait_for_phase(Phase::Paused, 30s));
    const auto msgs = s->messages_since(0, 0ms);
    REQUIRE_FALSE(msgs.empty());
    for (std::size_t i = 1; i < msgs.size(); ++i) CHECK(msgs[i].seq == msgs[i - 1].seq + 1);
    double prev_t = -1.0;
    std::size_t snapshots = 0;
    for (const auto& m : msgs) {
        const json line = json::parse(m.to_line());
        CHECK(line.contains("type"));
        CHECK(line.contains("seq"));
        CHECK(line.contains("payload"));
        if (m.type == "snapshot") {
            const double t = m.payload.at("t").get<double>();
            if (prev_t >= 0.0) CHECK(t - prev_t <= 0.2 + 1e-6);
            prev_t = t;
            ++snapshots;
        }
    }
    CHECK(snapshots >= 5 * 20);
    CHECK(s->messages_since(msgs.back().seq + 1, 10ms).empty());
    s->stop();
}

TEST_CASE("HTTP front end") {
    auto s = table2_session();
    SessionServer server(*s);
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    s->start();
    REQUIRE(s->wait_for_phase(Phase::Paused, 30s));

    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Get("/api/session");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("phase") == "paused-awaiting-decision");

    res = cli.Get("/api/recommendation");
    REQUIRE(res);
    CHECK(json::parse(res->body).at("table").at("rows").size() == 1024);

    res = cli.Post("/api/command", R"({"command":"fly"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(json::parse(res->body).at("ok") == false);
    res = cli.Post("/api/command", "not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = cli.Post("/api/command", R"({"command":"accept"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("phase") == "post-action");
    res = cli.Post("/api/command", R"({"command":"accept"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 409);

    std::string body;
    res = cli.Get("/api/stream?from=0", [&](const char* data, std::size_t n) {
        body.append(data, n);
        return true;
    });
    REQUIRE(res);
    std::size_t lines = 0;
    bool saw_outcome = false;
    std::uint64_t prev = 0;
    std::istringstream in(body);
    for (std::string line; std::getline(in, line);) {
        const json m = json::parse(line);
        if (lines) CHECK(m.at("seq").get<std::uint64_t>() == prev + 1);
        prev = m.at("seq").get<std::uint64_t>();
        if (m.at("type") == "outcome") saw_outcome = true;
        ++lines;
    }
    CHECK(saw_outcome);
    CHECK(lines > 100);

    res = cli.Get("/api/transcript");
    REQUIRE(res);
    CHECK(TranscriptLog::from_ndjson(res->body).count("outcome") == 1);
    server.stop();
    s->stop();
}
