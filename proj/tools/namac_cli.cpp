// namac: batch data generation, training, assessment, closed-loop runs and
// the operator session service.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "namac/assessment.hpp"
#include "namac/errors.hpp"
#include "namac/gateway.hpp"
#include "namac/kernels.hpp"
#include "namac/scenario.hpp"
#include "namac/twins.hpp"
#include "namac/util.hpp"
#include "namac/workflow.hpp"

using namespace namac;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::string config_path;
    std::string data_root = ".";
    int threads = 0;
};

PlantConfig plant_config(const Globals& g) {
    PlantConfig c = g.config_path.empty() ? PlantConfig{} : load_plant_config(g.config_path);
    c.validate();
    return c;
}

std::string under_root(const Globals& g, const std::string& path, const char* fallback) {
    if (!path.empty()) return path;
    return (fs::path(g.data_root) / fallback).string();
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& part : split(text, ','))
        if (!trim(part).empty()) out.push_back(std::stod(trim(part)));
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw InvalidConfig("cannot write " + path);
        out << text;
        if (!out) throw InvalidConfig("write failed: " + path);
    }
    fs::rename(tmp, path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidConfig("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::set<Channel> parse_channels(const std::string& text) {
    std::set<Channel> out;
    for (const auto& part : split(text, ',')) {
        const auto name = trim(part);
        if (name.empty()) continue;
        bool found = false;
        for (auto c : kAllChannels)
            if (name == channel_name(c)) {
                out.insert(c);
                found = true;
            }
        if (!found) throw InvalidConfig("unknown sensor channel '" + name + "'");
    }
    return out;
}

// ---- scenario selection (run, serve) ----

struct ScenarioArgs {
    std::string name = "table2";
    std::size_t index = 0;
    double w1_end = 0.5;
    double ramp = 50.0;
    double t_acc = 10010.0;
    double t_d = -1.0;  // <0: scenario default
    double horizon = 200.0;
    std::string discrepancy = "on";
    double x_lim = 15.0;
    std::string fail;
    double fail_at = 0.0;

    void add(CLI::App* app) {
        app->add_option("--scenario", name, "table2 | case-a | case-b | case-c | custom")
            ->check(CLI::IsMember({"table2", "case-a", "case-b", "case-c", "custom"}));
        app->add_option("--index", index, "case number inside a case-a/b/c family (0..9)");
        app->add_option("--w1-end", w1_end, "custom: pump 1 end speed, fraction of w_0");
        app->add_option("--ramp", ramp, "custom: ramp duration T_1 in s");
        app->add_option("--t-acc", t_acc, "accident start time in s");
        app->add_option("--t-d", t_d, "diagnosis window t_D in s");
        app->add_option("--horizon", horizon, "run length after the accident start in s");
        app->add_option("--discrepancy", discrepancy, "discrepancy checker on|off")
            ->check(CLI::IsMember({"on", "off"}));
        app->add_option("--x-lim", x_lim, "discrepancy threshold X_lim in degC");
        app->add_option("--fail", fail, "failed sensor channels, e.g. HPP,LPP");
        app->add_option("--fail-at", fail_at, "seconds after the accident start when --fail applies");
    }

    std::pair<ScenarioSpec, RunOptions> resolve(const PlantConfig& config) const {
        RunOptions o;
        o.timeline.t_acc = t_acc;
        o.timeline.t_w = t_acc - 10.0;
        o.timeline.horizon = horizon;
        o.discrepancy.enabled = discrepancy == "on";
        o.discrepancy.x_lim = x_lim;
        o.failures = parse_channels(fail);
        o.failure_time = t_acc + fail_at;
        ScenarioSpec s;
        if (name == "table2") {
            s = table2_scenario(config);
            s.accident_time = t_acc;
        } else if (name == "custom") {
            s = ScenarioSpec::make(w1_end, ramp, t_acc, config.nominal_pump_speed);
        } else {
            const auto family = confusion_family(static_cast<char>(std::toupper(name.back())), 10,
                                                 config.nominal_pump_speed, t_acc);
            if (index >= family.size()) throw InvalidConfig("--index must be below 10");
            s = family[index].scenario;
            o.timeline.t_d = family[index].t_d;
        }
        if (t_d >= 0.0) o.timeline.t_d = t_d;
        s.validate(config.nominal_pump_speed);
        o.timeline.validate();
        o.discrepancy.validate();
        return {s, o};
    }
};

TwinBundle checked_bundle(const std::string& dir, const PlantConfig& config) {
    TwinBundle b = load_bundle(dir);
    if (!b.complete()) throw BundleMismatch("bundle in " + dir + " needs both twins; run train for each");
    b.check(config);
    return b;
}

json outcome_json(const Outcome& o) {
    return {{"max_T_PFCL_true", o.max_true_t_pfcl},
            {"max_diag_error", o.max_diag_error},
            {"scrammed", o.scrammed},
            {"limit_exceeded", o.limit_exceeded},
            {"grade", static_cast<int>(o.level)}};
}

// ---- gen-data ----

struct GenArgs {
    std::string out;
    std::size_t grid = 32;
    std::size_t uniform = 0;
    std::uint64_t seed = 2021;
    double test_fraction = 0.1;
    std::string family = "table2";
    std::string w1_ends = "0.5";
    std::string ramps = "50";
    double t_acc = 10010.0;
    std::size_t rows = kEpisodeRows;
    std::optional<double> w2_min, w2_max, trip_min, trip_max;
};

int cmd_gen_data(const Globals& g, const GenArgs& a) {
    const PlantConfig config = plant_config(g);
    ActionBounds bounds = default_action_bounds(config);
    if (a.w2_min) bounds.w2_min = *a.w2_min;
    if (a.w2_max) bounds.w2_max = *a.w2_max;
    if (a.trip_min) bounds.trip_min = *a.trip_min;
    if (a.trip_max) bounds.trip_max = *a.trip_max;
    bounds.validate();
    std::vector<ScenarioSpec> scenarios;
    if (a.family == "table2") {
        auto s = table2_scenario(config);
        s.accident_time = a.t_acc;
        scenarios.push_back(s);
    } else {
        for (double w : parse_list(a.w1_ends))
            for (double r : parse_list(a.ramps))
                scenarios.push_back(ScenarioSpec::make(w, r, a.t_acc, config.nominal_pump_speed));
    }
    if (scenarios.empty()) throw InvalidConfig("the scenario family is empty");
    const std::string out = under_root(g, a.out, "db");
    EpisodeStore store;
    if (a.uniform > 0) {
        store = build_action_set(scenarios, sample_uniform(bounds, a.uniform, a.seed), config, a.family, a.rows);
        store.header.bounds = bounds;
    } else {
        DatabaseRequest r;
        r.scenarios = scenarios;
        r.family_name = a.family;
        r.bounds = bounds;
        r.grid_n = a.grid;
        r.seed = a.seed;
        r.test_fraction = a.test_fraction;
        r.rows = a.rows;
        store = build_database(r, config);
    }
    save_store(store, out);
    std::cout << "wrote " << store.size() << " episodes (" << store.indices(Split::Train).size() << " train, "
              << store.indices(Split::Test).size() << " test) to " << out << '\n';
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string twin;
    std::string db;
    std::string bundle;
    std::optional<double> target_mse;
    std::size_t max_epochs = 1000000;
    std::uint64_t seed = 7;
    std::uint64_t init_seed = 11;
    double learning_rate = 2e-3;
    double alpha = 1e-7;
    double beta = 1.0;
    std::size_t batch = 128;
    std::string hidden = "20,20,20";
    std::size_t row_stride = 5;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
    const PlantConfig config = plant_config(g);
    const std::string db = under_root(g, a.db, "db");
    if (!fs::exists(fs::path(db) / "manifest.txt")) throw StoreFormatError("no episode database at " + db);
    const EpisodeStore store = load_store(db);
    if (store.header.config_hash != config.hash())
        throw BundleMismatch("database " + db + " was generated with plant config " + store.header.config_hash);
    const TwinKind kind = a.twin == "diagnosis" ? TwinKind::Diagnosis : TwinKind::Prognosis;
    TwinTrainingOptions o;
    o.hyper.target_mse = a.target_mse.value_or(kind == TwinKind::Diagnosis ? 1e-2 : 1e-3);
    o.hyper.max_epochs = a.max_epochs;
    o.hyper.seed = a.seed;
    o.hyper.learning_rate = a.learning_rate;
    o.hyper.alpha = a.alpha;
    o.hyper.beta = a.beta;
    o.hyper.batch_size = a.batch;
    o.init_seed = a.init_seed;
    o.diagnosis_row_stride = a.row_stride;
    o.hidden.clear();
    for (double h : parse_list(a.hidden)) o.hidden.push_back(static_cast<std::size_t>(h));
    o.hyper.validate();

    const TwinTraining t = train_twin(kind, store, o, config.dt);
    const std::string dir = under_root(g, a.bundle, "bundle");
    TwinBundle b;
    if (fs::exists(fs::path(dir) / "bundle.json")) {
        b = load_bundle(dir);
        if (b.config_hash != config.hash() || !(b.bounds.w2_min == store.header.bounds.w2_min &&
                                                b.bounds.w2_max == store.header.bounds.w2_max &&
                                                b.bounds.trip_min == store.header.bounds.trip_min &&
                                                b.bounds.trip_max == store.header.bounds.trip_max))
            b = TwinBundle{};
    }
    b.config_hash = config.hash();
    b.bounds = store.header.bounds;
    if (store.header.grid_n > 0) b.grid_n = store.header.grid_n;
    const TwinRecord rec{store.header.config_hash, o.hyper.target_mse,     t.result.report.epochs,
                         t.result.report.reached_target, t.result.report.rmse_train, t.test_rmse};
    if (kind == TwinKind::Diagnosis) {
        b.diagnosis = t.result.model;
        b.diagnosis_record = rec;
    } else {
        b.prognosis = t.result.model;
        b.prognosis_record = rec;
    }
    save_bundle(b, dir);
    json report{{"twin", twin_name(kind)},
                {"target_mse", o.hyper.target_mse},
                {"epochs", t.result.report.epochs},
                {"reached_target", t.result.report.reached_target},
                {"train_mse", t.result.report.train_mse},
                {"rmse_train", t.result.report.rmse_train},
                {"rmse_validation", t.result.report.rmse_validation},
                {"rmse_test", t.test_rmse},
                {"train_rows", t.train_rows},
                {"test_rows", t.test_rows},
                {"history", t.result.report.history}};
    write_text((fs::path(dir) / (std::string("train_report_") + twin_name(kind) + ".json")).string(),
               report.dump(2) + "\n");
    std::cout << twin_name(kind) << ": " << t.result.report.epochs << " epochs, reached target "
              << (t.result.report.reached_target ? "yes" : "no") << ", RMSE train " << t.result.report.rmse_train
              << " degC, test " << t.test_rmse << " degC -> " << dir << '\n';
    return 0;
}

// ---- assess ----

struct AssessArgs {
    std::string bundle;
    std::string train;
    std::string tests;
    std::string db;
    std::string runs;
    std::string out;
    std::string targets = "1e-3,1e-2,0.1,0.5,1,10";
    std::vector<std::string> cases;
    std::optional<double> target_mse;
    std::size_t max_epochs = 1000000;
    std::size_t grid_n = 16;
    std::size_t family_runs = 10;
    bool generate = false;
    double failure_start = 5.0;
};

TwinTrainingOptions assess_training(const AssessArgs& a) {
    TwinTrainingOptions o;
    if (a.target_mse) o.hyper.target_mse = *a.target_mse;
    o.hyper.max_epochs = a.max_epochs;
    return o;
}

int cmd_coverage(const Globals& g, const AssessArgs& a) {
    const PlantConfig config = plant_config(g);
    CoverageOptions co;
    co.grid_n = a.grid_n;
    std::vector<NamedStore> tests;
    std::optional<EpisodeStore> train;
    if (a.train.empty()) {
        const auto bench = build_coverage_benchmark(config);
        train = bench.train_extrapolated;
        tests = {{"train", bench.train_extrapolated},
                 {"test-extrapolated", bench.test_extrapolated},
                 {"test-interpolated", bench.test_interpolated}};
    } else {
        train = load_store(a.train);
        tests.push_back({"train", *train});
        for (const auto& dir : split(a.tests, ','))
            if (!trim(dir).empty()) tests.push_back({fs::path(trim(dir)).filename().string(), load_store(trim(dir))});
    }
    CoverageReport r;
    if (!a.bundle.empty())
        r = coverage_report(*checked_bundle(a.bundle, config).diagnosis, *train, tests, co);
    else
        r = coverage_study(*train, tests, assess_training(a), co);
    write_text(a.out, coverage_csv(r));
    return 0;
}

int cmd_confusion(const Globals& g, const AssessArgs& a) {
    const PlantConfig config = plant_config(g);
    const std::string runs = under_root(g, a.runs, "runs");
    double limit = 685.0;
    if (a.generate) {
        const TwinBundle b = checked_bundle(under_root(g, a.bundle, "bundle"), config);
        const TwinSet twins = b.twins();
        limit = twins.safety_limit;
        fs::create_directories(runs);
        for (char f : {'A', 'B', 'C'}) {
            const auto family = confusion_family(f, a.family_runs, config.nominal_pump_speed, 10010.0);
            for (std::size_t i = 0; i < family.size(); ++i) {
                RunOptions o;
                o.timeline.t_d = family[i].t_d;
                o.discrepancy.enabled = false;
                const auto log = run_closed_loop(config, family[i].scenario, twins, Policy::AutoAccept, o);
                char name[32];
                std::snprintf(name, sizeof name, "%c_%02zu.ndjson", f, i);
                write_text((fs::path(runs) / name).string(), log.to_ndjson());
            }
        }
    } else if (!a.bundle.empty()) {
        limit = load_bundle(a.bundle).safety_limit;
    }
    if (!fs::is_directory(runs)) throw EmptyInput("no run directory " + runs);
    std::map<std::string, std::vector<fs::path>> groups;
    for (const auto& entry : fs::directory_iterator(runs)) {
        if (entry.path().extension() != ".ndjson") continue;
        const std::string stem = entry.path().stem().string();
        groups[stem.substr(0, stem.find('_'))].push_back(entry.path());
    }
    if (groups.empty()) throw EmptyInput("no .ndjson transcripts in " + runs);
    std::vector<FamilyResult> families;
    for (auto& [name, files] : groups) {
        std::sort(files.begin(), files.end());
        FamilyResult f;
        f.name = name;
        for (const auto& p : files) {
            const auto k = classify_transcript(TranscriptLog::from_ndjson(read_text(p.string())), limit);
            f.true_max.push_back(k.true_max);
            f.predicted_max.push_back(k.predicted_max);
            f.cells.push_back(k.cell);
        }
        f.matrix = confusion_matrix(f.cells);
        families.push_back(std::move(f));
    }
    write_text(a.out, confusion_csv(families));
    return 0;
}

int cmd_sweep(const Globals& g, const AssessArgs& a) {
    const PlantConfig config = plant_config(g);
    std::vector<SweepCase> cases;
    if (a.cases.empty()) {
        auto bench = build_coverage_benchmark(config);
        cases.push_back({CoverageTag::Interpolated, bench.train_interpolated, bench.test_interpolated});
        cases.push_back({CoverageTag::Extrapolated, bench.train_extrapolated, bench.test_extrapolated});
    }
    for (const auto& spec : a.cases) {
        const auto parts = split(spec, ':');
        if (parts.size() != 3) throw InvalidConfig("--case expects tag:train_dir:test_dir");
        CoverageTag tag;
        if (parts[0] == "interpolated") tag = CoverageTag::Interpolated;
        else if (parts[0] == "extrapolated") tag = CoverageTag::Extrapolated;
        else throw InvalidConfig("case tag must be interpolated or extrapolated");
        cases.push_back({tag, load_store(parts[1]), load_store(parts[2])});
    }
    write_text(a.out, sweep_csv(target_loss_sweep(parse_list(a.targets), cases, assess_training(a))));
    return 0;
}

int cmd_failures(const Globals& g, const AssessArgs& a) {
    const PlantConfig config = plant_config(g);
    const TwinBundle b = checked_bundle(under_root(g, a.bundle, "bundle"), config);
    const EpisodeStore store = load_store(under_root(g, a.db, "db"));
    std::vector<FailureSpec> specs;
    for (unsigned mask = 1; mask < 8; ++mask) {
        FailureSpec s;
        for (auto c : kAllChannels)
            if (mask & (1u << static_cast<int>(c))) {
                s.channels.insert(c);
                s.name += (s.name.empty() ? "" : "+") + std::string(channel_name(c));
            }
        specs.push_back(s);
    }
    const auto traces = sensor_failure_study(*b.diagnosis, store, specs, a.failure_start);
    std::ostringstream out;
    out << "failure,scram_path,onset_s,t,rmse\n";
    for (const auto& tr : traces) {
        const std::string onset = tr.onset ? format_sig(*tr.onset, 6) : "none";
        if (tr.scram_path) out << tr.name << ",1," << onset << ",,\n";
        for (std::size_t i = 0; i < tr.t.size(); ++i)
            out << tr.name << ',' << (tr.scram_path ? 1 : 0) << ',' << onset << ',' << format_sig(tr.t[i], 6) << ','
                << format_sig(tr.rmse[i], 6) << '\n';
    }
    write_text(a.out, out.str());
    return 0;
}

int cmd_surface(const Globals& g, const AssessArgs& a) {
    const PlantConfig config = plant_config(g);
    const TwinBundle b = checked_bundle(under_root(g, a.bundle, "bundle"), config);
    const EpisodeStore store = load_store(under_root(g, a.db, "db"));
    const auto s = error_surface(*b.diagnosis, store);
    std::ostringstream out;
    out << "episode,w2_end,T_trip,rmse\n";
    for (std::size_t e = 0; e < s.episodes; ++e)
        out << e << ',' << format_sig(store.episodes[e].action.w2_end, 9) << ','
            << format_sig(store.episodes[e].action.t_trip, 9) << ',' << format_sig(s.episode_rmse[e], 6) << '\n';
    write_text(a.out, out.str());
    std::cerr << "max episode RMSE " << s.max_rmse << " degC, max |error| " << s.max_abs_error << " degC\n";
    return 0;
}

// ---- run ----

struct RunArgs {
    ScenarioArgs scenario;
    std::string policy = "auto";
    std::string bundle;
    std::string out;
};

int cmd_run(const Globals& g, const RunArgs& a) {
    const PlantConfig config = plant_config(g);
    const auto [spec, options] = a.scenario.resolve(config);
    const Policy policy = parse_policy(a.policy);
    if (policy == Policy::OperatorGated) throw InvalidConfig("operator gating needs the session service (serve)");
    const TwinBundle b = checked_bundle(under_root(g, a.bundle, "bundle"), config);
    const auto log = run_closed_loop(config, spec, b.twins(), policy, options);
    const std::string out = a.out.empty() ? (fs::path(g.data_root) / "runs" / (a.scenario.name + ".ndjson")).string()
                                          : a.out;
    write_text(out, log.to_ndjson());
    json summary = outcome_json(outcome_of(log));
    summary["transcript"] = out;
    summary["hash"] = log.hash();
    std::cout << summary.dump() << '\n';
    return 0;
}

// ---- serve ----

struct ServeArgs {
    ScenarioArgs scenario;
    std::string bundle;
    std::string host = "127.0.0.1";
    int port = 8080;
    double speed = 1.0;
    bool paused = false;
};

SessionServer* g_server = nullptr;

int cmd_serve(const Globals& g, ServeArgs a) {
    const PlantConfig config = plant_config(g);
    if (const char* p = std::getenv("NAMAC_PORT"); p && *p) a.port = std::stoi(p);
    const auto [spec, options] = a.scenario.resolve(config);
    const TwinBundle b = checked_bundle(under_root(g, a.bundle, "bundle"), config);
    SessionSettings settings;
    settings.speed = a.speed;
    settings.start_running = !a.paused;
    Session session(config, spec, b.twins(), options, settings);
    SessionServer server(session);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    session.start();
    std::cout << "serving session on http://" << a.host << ':' << a.port << std::endl;
    server.run(a.host, a.port);
    session.stop();
    g_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NAMAC toolkit: data generation, twin training, assessment, closed-loop runs and the session service"};
    app.require_subcommand(1);
    Globals g;
    if (const char* root = std::getenv("NAMAC_DATA_ROOT"); root && *root) g.data_root = root;
    app.add_option("--config", g.config_path, "plant config file (key = value)");
    app.add_option("--data-root", g.data_root, "default location of db/, bundle/ and runs/ (env NAMAC_DATA_ROOT)");
    app.add_option("--threads", g.threads, "OpenMP threads, 0 = runtime default");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "run the plant over a control grid and write an episode database");
    gen_cmd->add_option("--out", gen.out, "output directory (default <data-root>/db)");
    gen_cmd->add_option("--grid", gen.grid, "lattice points per control axis");
    gen_cmd->add_option("--uniform", gen.uniform, "draw this many uniform actions instead of a lattice");
    gen_cmd->add_option("--seed", gen.seed, "split / uniform draw seed");
    gen_cmd->add_option("--test-fraction", gen.test_fraction, "fraction of episodes labeled test");
    gen_cmd->add_option("--family", gen.family, "table2, or any name to use --w1-end/--ramp");
    gen_cmd->add_option("--w1-end", gen.w1_ends, "comma list of pump 1 end speeds (fraction of w_0)");
    gen_cmd->add_option("--ramp", gen.ramps, "comma list of ramp durations T_1 in s");
    gen_cmd->add_option("--t-acc", gen.t_acc, "accident start time in s");
    gen_cmd->add_option("--rows", gen.rows, "rows per episode (0.1 s apart)");
    gen_cmd->add_option("--w2-min", gen.w2_min, "pump 2 end speed lower bound");
    gen_cmd->add_option("--w2-max", gen.w2_max, "pump 2 end speed upper bound");
    gen_cmd->add_option("--trip-min", gen.trip_min, "trip temperature lower bound in degC");
    gen_cmd->add_option("--trip-max", gen.trip_max, "trip temperature upper bound in degC");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train one twin and store it in a bundle");
    train_cmd->add_option("--twin", tr.twin, "diagnosis | prognosis")
        ->required()
        ->check(CLI::IsMember({"diagnosis", "prognosis"}));
    train_cmd->add_option("--db", tr.db, "episode database (default <data-root>/db)");
    train_cmd->add_option("--bundle", tr.bundle, "bundle directory (default <data-root>/bundle)");
    train_cmd->add_option("--target-mse", tr.target_mse, "stop at this normalized training MSE");
    train_cmd->add_option("--max-epochs", tr.max_epochs, "epoch cap");
    train_cmd->add_option("--seed", tr.seed, "shuffle seed");
    train_cmd->add_option("--init-seed", tr.init_seed, "weight initialization seed");
    train_cmd->add_option("--learning-rate", tr.learning_rate, "Adam step size");
    train_cmd->add_option("--alpha", tr.alpha, "weight penalty coefficient");
    train_cmd->add_option("--beta", tr.beta, "data loss coefficient");
    train_cmd->add_option("--batch", tr.batch, "minibatch rows");
    train_cmd->add_option("--hidden", tr.hidden, "comma list of hidden layer widths");
    train_cmd->add_option("--row-stride", tr.row_stride, "diagnosis rows: keep every n-th row");

    AssessArgs as;
    auto* assess_cmd = app.add_subcommand("assess", "uncertainty assessment studies");
    assess_cmd->require_subcommand(1);
    auto common = [&](CLI::App* c) {
        c->add_option("--out", as.out, "output file (default stdout)");
        c->add_option("--bundle", as.bundle, "twin bundle directory");
    };
    auto* cov = assess_cmd->add_subcommand("coverage", "KDE coverage vs. diagnosis error");
    common(cov);
    cov->add_option("--train", as.train, "training database (default: built-in loss-of-flow benchmark)");
    cov->add_option("--tests", as.tests, "comma list of test databases");
    cov->add_option("--grid", as.grid_n, "KDE grid points per axis");
    cov->add_option("--target-mse", as.target_mse, "training target when no --bundle is given");
    cov->add_option("--max-epochs", as.max_epochs, "epoch cap when training");
    auto* conf = assess_cmd->add_subcommand("confusion", "confusion matrices from closed-loop transcripts");
    common(conf);
    conf->add_option("--runs", as.runs, "directory of <family>_NN.ndjson transcripts (default <data-root>/runs)");
    conf->add_flag("--generate", as.generate, "first run case families A, B, C with --bundle into --runs");
    conf->add_option("--family-runs", as.family_runs, "cases per family with --generate");
    auto* sw = assess_cmd->add_subcommand("sweep", "diagnosis error against training target loss");
    common(sw);
    sw->add_option("--targets", as.targets, "comma list of target MSEs in [1e-3, 10]");
    sw->add_option("--case", as.cases, "tag:train_dir:test_dir (default: built-in benchmark pair)");
    sw->add_option("--max-epochs", as.max_epochs, "epoch cap per training");
    auto* fail = assess_cmd->add_subcommand("failures", "diagnosis error under sensor failures");
    common(fail);
    fail->add_option("--db", as.db, "episode database (default <data-root>/db)");
    fail->add_option("--failure-start", as.failure_start, "seconds after the accident start");
    auto* surf = assess_cmd->add_subcommand("surface", "per-episode diagnosis RMSE over the control grid");
    common(surf);
    surf->add_option("--db", as.db, "episode database (default <data-root>/db)");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "one closed-loop run, transcript to --out");
    run.scenario.add(run_cmd);
    run_cmd->add_option("--policy", run.policy, "auto | ignore")->check(CLI::IsMember({"auto", "ignore"}));
    run_cmd->add_option("--bundle", run.bundle, "twin bundle (default <data-root>/bundle)");
    run_cmd->add_option("--out", run.out, "transcript path (default <data-root>/runs/<scenario>.ndjson)");

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "operator-gated session over HTTP");
    sv.scenario.add(serve_cmd);
    serve_cmd->add_option("--bundle", sv.bundle, "twin bundle (default <data-root>/bundle)");
    serve_cmd->add_option("--host", sv.host, "bind address");
    serve_cmd->add_option("--port", sv.port, "TCP port (env NAMAC_PORT overrides)");
    serve_cmd->add_option("--speed", sv.speed, "plant seconds per wall second, 0 = unthrottled");
    serve_cmd->add_flag("--paused", sv.paused, "start with the clock paused");

    CLI11_PARSE(app, argc, argv);
    try {
        if (g.threads > 0) kernels::set_thread_count(g.threads);
        if (*gen_cmd) return cmd_gen_data(g, gen);
        if (*train_cmd) return cmd_train(g, tr);
        if (*cov) return cmd_coverage(g, as);
        if (*conf) return cmd_confusion(g, as);
        if (*sw) return cmd_sweep(g, as);
        if (*fail) return cmd_failures(g, as);
        if (*surf) return cmd_surface(g, as);
        if (*run_cmd) return cmd_run(g, run);
        if (*serve_cmd) return cmd_serve(g, sv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
