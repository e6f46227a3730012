#include "namac/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "namac/errors.hpp"
#include "namac/util.hpp"

namespace namac {

namespace fs = std::filesystem;

void ActionBounds::validate() const {
    if (!(w2_min < w2_max)) throw InvalidBounds("w2 bounds require min < max");
    if (!(trip_min < trip_max)) throw InvalidBounds("trip bounds require min < max");
}

bool ActionBounds::contains(const ControlAction& a) const {
    return a.w2_end >= w2_min && a.w2_end <= w2_max && a.t_trip >= trip_min && a.t_trip <= trip_max;
}

ActionBounds default_action_bounds(const PlantConfig& config, double safety_limit) {
    const auto s = steady_state(config);
    return ActionBounds{1.0, 1.5, std::round((s.t_pfcl + 5.0) * 1e6) / 1e6, safety_limit};
}

std::vector<ControlAction> sample_grid(const ActionBounds& bounds, std::size_t n) {
    bounds.validate();
    if (n < 1) throw InvalidBounds("grid needs at least one point per axis");
    const auto w2 = linspace(bounds.w2_min, bounds.w2_max, n);
    const auto trip = linspace(bounds.trip_min, bounds.trip_max, n);
    std::vector<ControlAction> out;
    out.reserve(n * n);
    for (double w : w2)
        for (double tt : trip) out.push_back({w, tt});
    return out;
}

std::vector<ControlAction> sample_uniform(const ActionBounds& bounds, std::size_t count,
                                          std::uint64_t seed) {
    bounds.validate();
    std::mt19937_64 rng(seed);
    // raw 53-bit draws: std::uniform_real_distribution is not portable across stdlibs
    auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    std::vector<ControlAction> out(count);
    for (auto& a : out) {
        a.w2_end = bounds.w2_min + (bounds.w2_max - bounds.w2_min) * unit();
        a.t_trip = bounds.trip_min + (bounds.trip_max - bounds.trip_min) * unit();
    }
    return out;
}

double quantize_record_value(double v) { return std::strtod(format_sig(v, 9).c_str(), nullptr); }

namespace {

EpisodeRow make_row(const PlantState& s) {
    return {quantize_record_value(s.t),     quantize_record_value(s.t_hpp),
            quantize_record_value(s.t_lpp), quantize_record_value(s.t_up),
            quantize_record_value(s.t_pfcl), quantize_record_value(s.w1),
            quantize_record_value(s.w2)};
}

}  // namespace

EpisodeRecord run_episode_dt(const ScenarioSpec& spec, const ControlAction& action,
                             const PlantConfig& config, double dt, std::size_t rows) {
    const double row_dt = 0.1;
    const auto substeps = static_cast<int>(std::lround(row_dt / dt));
    if (substeps < 1 || std::abs(substeps * dt - row_dt) > 1e-12)
        throw InvalidConfig("dt must divide the 0.1 s row spacing");

    EpisodeRecord rec;
    rec.scenario = spec;
    rec.action = action;
    rec.rows.reserve(rows);

    PlantState s = steady_state(config);
    s.t = spec.accident_time;
    double command = 1.0;
    for (std::size_t k = 0; k < rows; ++k) {
        if (k > 0) {
            for (int j = 0; j < substeps; ++j) s = step_dt(s, command, config, spec, dt);
            // re-anchor time on the row lattice
            s.t = spec.accident_time + row_dt * static_cast<double>(k);
        }
        rec.rows.push_back(make_row(s));
        if (!rec.trip_time && s.t_pfcl >= action.t_trip) {
            rec.trip_time = rec.rows.back().t;
            command = action.w2_end;
        }
    }
    rec.max_t_pfcl = std::max_element(rec.rows.begin(), rec.rows.end(),
                                      [](const auto& a, const auto& b) { return a.t_pfcl < b.t_pfcl; })
                         ->t_pfcl;
    return rec;
}

EpisodeRecord run_episode(const ScenarioSpec& spec, const ControlAction& action,
                          const PlantConfig& config, std::size_t rows) {
    return run_episode_dt(spec, action, config, config.dt, rows);
}

std::size_t EpisodeStore::total_rows() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.rows.size();
    return n;
}

std::vector<std::size_t> EpisodeStore::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::optional<std::pair<std::size_t, std::size_t>> lattice_index(const StoreHeader& h,
                                                                 const ControlAction& a) {
    if (h.grid_n == 0) return std::nullopt;
    const auto w2 = linspace(h.bounds.w2_min, h.bounds.w2_max, h.grid_n);
    const auto trip = linspace(h.bounds.trip_min, h.bounds.trip_max, h.grid_n);
    auto find = [](const std::vector<double>& axis, double v) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < axis.size(); ++i)
            if (axis[i] == v) return i;
        return std::nullopt;
    };
    auto i = find(w2, a.w2_end);
    auto j = find(trip, a.t_trip);
    if (!i || !j) return std::nullopt;
    return std::make_pair(*i, *j);
}

void EpisodeStore::validate() const {
    if (splits.size() != episodes.size()) throw StoreFormatError("split labels do not match episodes");
    std::set<std::tuple<double, double, double, double, double>> seen;
    for (const auto& e : episodes) {
        auto key = std::make_tuple(e.scenario.w1_end, e.scenario.ramp_duration,
                                   e.scenario.accident_time, e.action.w2_end, e.action.t_trip);
        if (!seen.insert(key).second) throw StoreFormatError("duplicate (scenario, action) episode");
        if (header.grid_n > 0 && !lattice_index(header, e.action))
            throw StoreFormatError("episode action is off the declared lattice");
        double m = -1e300;
        for (const auto& r : e.rows) m = std::max(m, r.t_pfcl);
        if (!e.rows.empty() && m != e.max_t_pfcl)
            throw StoreFormatError("stored max T_PFCL does not match the series");
    }
}

EpisodeStore build_action_set(const std::vector<ScenarioSpec>& scenarios,
                              const std::vector<ControlAction>& actions, const PlantConfig& config,
                              std::string family_name, std::size_t rows) {
    EpisodeStore store;
    store.header.config_hash = config.hash();
    store.header.scenario_family = std::move(family_name);
    store.header.grid_n = 0;
    const std::size_t n = scenarios.size() * actions.size();
    store.episodes.resize(n);
    store.splits.assign(n, Split::Test);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            const auto si = static_cast<std::size_t>(i) / actions.size();
            const auto ai = static_cast<std::size_t>(i) % actions.size();
            store.episodes[static_cast<std::size_t>(i)] =
                run_episode(scenarios[si], actions[ai], config, rows);
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return store;
}

EpisodeStore build_database(const DatabaseRequest& req, const PlantConfig& config) {
    req.bounds.validate();
    if (req.grid_n < 1) throw InvalidBounds("grid_n must be >= 1");
    if (req.scenarios.empty()) throw InvalidBounds("scenario family is empty");
    config.validate();

    const auto actions = sample_grid(req.bounds, req.grid_n);
    EpisodeStore store = build_action_set(req.scenarios, actions, config, req.family_name, req.rows);
    store.header.grid_n = req.grid_n;
    store.header.bounds = req.bounds;

    // split by episode: seeded Fisher-Yates over indices
    const std::size_t n = store.episodes.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(req.seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    const auto n_test = static_cast<std::size_t>(std::floor(req.test_fraction * static_cast<double>(n)));
    store.splits.assign(n, Split::Train);
    for (std::size_t k = 0; k < n_test; ++k) store.splits[order[k]] = Split::Test;
    store.validate();
    return store;
}

SelectionPattern SelectionPattern::parse(const std::string& text) {
    auto parts = split(text, ':');
    if (parts.size() != 3) throw EmptySelection("pattern must be start:stride:end, got " + text);
    SelectionPattern p;
    try {
        p.start = std::stoul(parts[0]);
        p.stride = std::stoul(parts[1]);
        p.end = std::stoul(parts[2]);
    } catch (const std::exception&) {
        throw EmptySelection("pattern must be numeric: " + text);
    }
    return p;
}

EpisodeStore select_episodes(const EpisodeStore& store, const SelectionPattern& p) {
    if (p.start < 1 || p.stride < 1 || p.end < p.start || p.start > store.size())
        throw EmptySelection("selection pattern selects no episodes");
    EpisodeStore out;
    out.header = store.header;
    const std::size_t last = std::min(p.end, store.size());
    for (std::size_t pos = p.start; pos <= last; pos += p.stride) {
        out.episodes.push_back(store.episodes[pos - 1]);
        out.splits.push_back(store.splits[pos - 1]);
    }
    if (out.episodes.empty()) throw EmptySelection("selection pattern selects no episodes");
    return out;
}

namespace {

std::string trip_text(const std::optional<double>& t) { return t ? format_sig(*t, 9) : "none"; }

std::string episode_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "episode_%04zu.csv", i);
    return buf;
}

double parse_double(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw StoreFormatError("bad number in " + what + ": " + s);
    return v;
}

}  // namespace

void save_store(const EpisodeStore& store, const std::string& dir) {
    store.validate();
    const fs::path root(dir);
    fs::create_directories(root / "episodes");
    const fs::path manifest = root / "manifest.txt";
    fs::remove(manifest);

    for (std::size_t i = 0; i < store.episodes.size(); ++i) {
        std::ofstream out(root / "episodes" / episode_file(i));
        if (!out) throw StoreFormatError("cannot write episode file in " + dir);
        out << kEpisodeCsvHeader << '\n';
        for (const auto& r : store.episodes[i].rows) {
            out << format_sig(r.t, 9) << ',' << format_sig(r.t_hpp, 9) << ','
                << format_sig(r.t_lpp, 9) << ',' << format_sig(r.t_up, 9) << ','
                << format_sig(r.t_pfcl, 9) << ',' << format_sig(r.w1, 9) << ','
                << format_sig(r.w2, 9) << '\n';
        }
        if (!out) throw StoreFormatError("short write in " + dir);
    }

    const fs::path tmp = root / "manifest.txt.tmp";
    {
        std::ofstream out(tmp);
        const auto& h = store.header;
        out << "# namac episode store v1\n";
        out << "config_hash = " << h.config_hash << '\n';
        out << "scenario_family = " << h.scenario_family << '\n';
        out << "grid_n = " << h.grid_n << '\n';
        out << "w2_bounds = " << format_sig(h.bounds.w2_min, 17) << ' ' << format_sig(h.bounds.w2_max, 17) << '\n';
        out << "trip_bounds = " << format_sig(h.bounds.trip_min, 17) << ' '
            << format_sig(h.bounds.trip_max, 17) << '\n';
        out << "episodes = " << store.episodes.size() << '\n';
        out << "# id,file,w1_end,ramp_duration,accident_time,coastdown_rate,w2_end,T_trip,max_T_PFCL,trip_time,split\n";
        for (std::size_t i = 0; i < store.episodes.size(); ++i) {
            const auto& e = store.episodes[i];
            out << i << ',' << episode_file(i) << ',' << format_sig(e.scenario.w1_end, 17) << ','
                << format_sig(e.scenario.ramp_duration, 17) << ','
                << format_sig(e.scenario.accident_time, 17) << ','
                << format_sig(e.scenario.coastdown_rate, 17) << ',' << format_sig(e.action.w2_end, 17)
                << ',' << format_sig(e.action.t_trip, 17) << ',' << format_sig(e.max_t_pfcl, 9) << ','
                << trip_text(e.trip_time) << ',' << (store.splits[i] == Split::Train ? "train" : "test")
                << '\n';
        }
        if (!out) throw StoreFormatError("cannot write manifest in " + dir);
    }
    fs::rename(tmp, manifest);
}

EpisodeStore load_store(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream in(root / "manifest.txt");
    if (!in) throw StoreFormatError("no manifest.txt in " + dir);
    EpisodeStore store;
    std::string line;
    std::size_t declared = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (auto eq = line.find(" = "); eq != std::string::npos && line.find(',') == std::string::npos) {
            const auto key = line.substr(0, eq);
            const auto value = line.substr(eq + 3);
            auto& h = store.header;
            if (key == "config_hash") h.config_hash = value;
            else if (key == "scenario_family") h.scenario_family = value;
            else if (key == "grid_n") h.grid_n = std::stoul(value);
            else if (key == "episodes") declared = std::stoul(value);
            else if (key == "w2_bounds" || key == "trip_bounds") {
                std::istringstream vs(value);
                std::string a, b;
                vs >> a >> b;
                if (key == "w2_bounds") {
                    h.bounds.w2_min = parse_double(a, key);
                    h.bounds.w2_max = parse_double(b, key);
                } else {
                    h.bounds.trip_min = parse_double(a, key);
                    h.bounds.trip_max = parse_double(b, key);
                }
            } else {
                throw StoreFormatError("unknown manifest key " + key);
            }
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 11) throw StoreFormatError("bad manifest row: " + line);
        EpisodeRecord e;
        e.scenario.w1_end = parse_double(f[2], "w1_end");
        e.scenario.ramp_duration = parse_double(f[3], "ramp_duration");
        e.scenario.accident_time = parse_double(f[4], "accident_time");
        e.scenario.coastdown_rate = parse_double(f[5], "coastdown_rate");
        e.action.w2_end = parse_double(f[6], "w2_end");
        e.action.t_trip = parse_double(f[7], "T_trip");
        e.max_t_pfcl = parse_double(f[8], "max_T_PFCL");
        if (f[9] != "none") e.trip_time = parse_double(f[9], "trip_time");
        if (f[10] != "train" && f[10] != "test") throw StoreFormatError("bad split label " + f[10]);
        store.splits.push_back(f[10] == "train" ? Split::Train : Split::Test);

        std::ifstream ep(root / "episodes" / f[1]);
        if (!ep) throw StoreFormatError("missing episode file " + f[1]);
        std::string row;
        std::getline(ep, row);
        if (row != kEpisodeCsvHeader) throw StoreFormatError("bad episode header in " + f[1]);
        while (std::getline(ep, row)) {
            if (row.empty()) continue;
            const auto c = split(row, ',');
            if (c.size() != 7) throw StoreFormatError("bad episode row in " + f[1]);
            e.rows.push_back({parse_double(c[0], f[1]), parse_double(c[1], f[1]), parse_double(c[2], f[1]),
                              parse_double(c[3], f[1]), parse_double(c[4], f[1]), parse_double(c[5], f[1]),
                              parse_double(c[6], f[1])});
        }
        store.episodes.push_back(std::move(e));
    }
    if (store.episodes.size() != declared)
        throw StoreFormatError("manifest declares " + std::to_string(declared) + " episodes, found " +
                               std::to_string(store.episodes.size()));
    store.validate();
    return store;
}

}  // namespace namac
