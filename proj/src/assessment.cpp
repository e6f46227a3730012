#include "namac/assessment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "namac/errors.hpp"
#include "namac/kernels.hpp"
#include "namac/util.hpp"

namespace namac {

const char* cell_name(Cell c) {
    switch (c) {
        case Cell::TP: return "TP";
        case Cell::FP: return "FP";
        case Cell::FN: return "FN";
        case Cell::TN: return "TN";
    }
    return "?";
}

Cell classify_case(double true_max, double predicted_max, double limit) {
    const bool true_safe = true_max < limit;
    const bool predicted_safe = predicted_max < limit;
    if (predicted_safe) return true_safe ? Cell::TP : Cell::FP;
    return true_safe ? Cell::FN : Cell::TN;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

double stddev(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::optional<double> ConfusionMatrix::tpr() const { return ratio(tp, tp + fn); }
std::optional<double> ConfusionMatrix::fpr() const { return ratio(fp, fp + tn); }
std::optional<double> ConfusionMatrix::fnr() const { return ratio(fn, tp + fn); }
std::optional<double> ConfusionMatrix::tnr() const { return ratio(tn, fp + tn); }

ConfusionMatrix confusion_matrix(const std::vector<Cell>& cases) {
    if (cases.empty()) throw EmptyInput("confusion matrix needs at least one case");
    ConfusionMatrix m;
    for (Cell c : cases) {
        switch (c) {
            case Cell::TP: ++m.tp; break;
            case Cell::FP: ++m.fp; break;
            case Cell::FN: ++m.fn; break;
            case Cell::TN: ++m.tn; break;
        }
    }
    return m;
}

std::string format_rate(const std::optional<double>& rate) {
    if (!rate) return "undefined";
    return format_sig(*rate * 100.0, 4) + "%";
}

// ---- densities -------------------------------------------------------------

std::size_t DensityGrid::points() const {
    std::size_t n = axes.empty() ? 0 : 1;
    for (const auto& a : axes) n *= a.size();
    return n;
}

double DensityGrid::cell_volume() const {
    double v = 1.0;
    for (const auto& a : axes) v *= a.size() > 1 ? (a.back() - a.front()) / static_cast<double>(a.size() - 1) : 1.0;
    return v;
}

std::vector<double> DensityGrid::coordinates() const {
    const std::size_t n = points();
    std::vector<double> out(n * dims);
    for (std::size_t p = 0; p < n; ++p) {
        std::size_t rem = p;
        for (std::size_t d = dims; d-- > 0;) {
            const std::size_t len = axes[d].size();
            out[p * dims + d] = axes[d][rem % len];
            rem /= len;
        }
    }
    return out;
}

DensityGrid make_grid(const std::vector<double>& lo, const std::vector<double>& hi, std::size_t n_per_axis) {
    if (lo.size() != hi.size() || lo.empty()) throw GridMismatch("grid bounds must have equal, non-zero length");
    if (n_per_axis == 0) throw GridMismatch("grid needs at least one point per axis");
    DensityGrid g;
    g.dims = lo.size();
    for (std::size_t d = 0; d < lo.size(); ++d) {
        if (!(lo[d] < hi[d])) throw GridMismatch("grid axis needs lo < hi");
        g.axes.push_back(linspace(lo[d], hi[d], n_per_axis));
    }
    return g;
}

std::vector<double> kde(const std::vector<double>& samples, std::size_t dims, const std::vector<double>& bandwidth,
                        const DensityGrid& grid) {
    if (dims == 0 || samples.empty() || samples.size() % dims != 0) throw EmptyInput("kde needs at least one sample");
    if (bandwidth.size() != dims) throw DegenerateBandwidth("bandwidth length must equal the dimension");
    for (double h : bandwidth)
        if (!(h > 0.0) || !std::isfinite(h)) throw DegenerateBandwidth("bandwidth must be positive and finite");
    if (grid.dims != dims) throw GridMismatch("grid dimension differs from the samples");
    const auto coords = grid.coordinates();
    std::vector<double> density(grid.points());
    kernels::kde_parallel(samples, dims, bandwidth, coords, density);
    return density;
}

std::vector<double> scott_bandwidth(const std::vector<double>& samples, std::size_t dims) {
    if (dims == 0 || samples.empty()) throw EmptyInput("bandwidth needs samples");
    const std::size_t n = samples.size() / dims;
    const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(dims) + 4.0));
    std::vector<double> h(dims);
    for (std::size_t d = 0; d < dims; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += samples[i * dims + d];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (samples[i * dims + d] - mean) * (samples[i * dims + d] - mean);
        var /= static_cast<double>(n > 1 ? n - 1 : 1);
        if (!(var > 0.0)) throw DegenerateBandwidth("zero spread along dimension " + std::to_string(d));
        h[d] = std::sqrt(var) * factor;
    }
    return h;
}

std::vector<double> normalize_density(std::vector<double> density, double cell_volume) {
    const double mass = std::accumulate(density.begin(), density.end(), 0.0) * cell_volume;
    if (!(mass > 0.0)) throw DegenerateBandwidth("density has no mass on the grid");
    for (auto& v : density) v /= mass;
    return density;
}

std::vector<double> cell_probabilities(const std::vector<double>& density) {
    const double total = std::accumulate(density.begin(), density.end(), 0.0);
    if (!(total > 0.0)) throw DegenerateBandwidth("density has no mass on the grid");
    std::vector<double> p(density.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = density[i] / total;
    return p;
}

double sym_kl(const std::vector<double>& p, const std::vector<double>& d) {
    if (p.size() != d.size() || p.empty()) throw GridMismatch("densities are not on a shared grid");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = std::max(p[i], kKlFloor);
        const double b = std::max(d[i], kKlFloor);
        s += a * std::log(a / b) + b * std::log(b / a);
    }
    return s;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw LengthMismatch("pearson needs two equal series of length >= 2");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw ZeroVariance("pearson is undefined for a constant series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---- coverage --------------------------------------------------------------

Dataset all_diagnosis_rows(const EpisodeStore& store, std::size_t row_stride) {
    std::vector<std::size_t> all(store.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return diagnosis_dataset(store, all, row_stride);
}

namespace {

std::vector<double> capped_normalized(const NeuralNetModel& model, const Dataset& d, std::size_t cap) {
    std::vector<double> xn(d.x.size());
    model.input_norm.normalize(d.x, xn);
    const std::size_t rows = d.rows();
    if (cap == 0 || rows <= cap) return xn;
    std::vector<double> out;
    out.reserve(cap * d.n_in);
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t r = i * rows / cap;
        out.insert(out.end(), xn.begin() + static_cast<std::ptrdiff_t>(r * d.n_in),
                   xn.begin() + static_cast<std::ptrdiff_t>((r + 1) * d.n_in));
    }
    return out;
}

}  // namespace

CoverageReport coverage_report(const NeuralNetModel& diagnosis, const EpisodeStore& train,
                               const std::vector<NamedStore>& tests, const CoverageOptions& options) {
    if (tests.empty()) throw EmptyInput("coverage needs at least one test store");
    const std::size_t dims = kDiagnosisInputs;
    const Dataset train_rows = all_diagnosis_rows(train, options.row_stride);
    const auto train_samples = capped_normalized(diagnosis, train_rows, options.max_samples);

    std::vector<Dataset> test_rows;
    std::vector<std::vector<double>> test_samples;
    for (const auto& t : tests) {
        test_rows.push_back(all_diagnosis_rows(t.store, options.row_stride));
        test_samples.push_back(capped_normalized(diagnosis, test_rows.back(), options.max_samples));
    }

    CoverageReport report;
    report.grid_n = options.grid_n;
    report.bandwidth = scott_bandwidth(train_samples, dims);
    std::vector<double> lo(dims, INFINITY), hi(dims, -INFINITY);
    auto extend = [&](const std::vector<double>& s) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            lo[i % dims] = std::min(lo[i % dims], s[i]);
            hi[i % dims] = std::max(hi[i % dims], s[i]);
        }
    };
    extend(train_samples);
    for (const auto& s : test_samples) extend(s);
    for (std::size_t d = 0; d < dims; ++d) {
        lo[d] -= options.padding * report.bandwidth[d];
        hi[d] += options.padding * report.bandwidth[d];
    }
    const DensityGrid grid = make_grid(lo, hi, options.grid_n);
    const auto p_train = cell_probabilities(kde(train_samples, dims, report.bandwidth, grid));

    report.train_rmse = rmse(predict(diagnosis, train_rows), train_rows.y);
    std::vector<double> kls, errs;
    for (std::size_t i = 0; i < tests.size(); ++i) {
        CoverageEntry e;
        e.name = tests[i].name;
        const auto p_test = cell_probabilities(kde(test_samples[i], dims, report.bandwidth, grid));
        e.sym_kl = sym_kl(p_train, p_test);
        e.rmse = rmse(predict(diagnosis, test_rows[i]), test_rows[i].y);
        e.rows = test_rows[i].rows();
        kls.push_back(e.sym_kl);
        errs.push_back(e.rmse);
        report.entries.push_back(e);
    }
    report.sigma_kl = stddev(kls);
    report.sigma_rmse = stddev(errs);
    if (kls.size() >= 2) {
        try {
            report.rho = pearson(kls, errs);
        } catch (const ZeroVariance&) {
            report.rho.reset();
        }
    }
    return report;
}

CoverageReport coverage_study(const EpisodeStore& train, const std::vector<NamedStore>& tests,
                              const TwinTrainingOptions& training, const CoverageOptions& options) {
    const Dataset rows = all_diagnosis_rows(train, training.diagnosis_row_stride);
    std::vector<std::size_t> sizes{rows.n_in};
    sizes.insert(sizes.end(), training.hidden.begin(), training.hidden.end());
    sizes.push_back(rows.n_out);
    auto result = namac::train(NeuralNetModel::create(sizes, training.init_seed), rows, Dataset{}, training.hyper);
    return coverage_report(result.model, train, tests, options);
}

std::string coverage_csv(const CoverageReport& report) {
    std::ostringstream out;
    out << "store,sym_kl,rmse,rows\n";
    for (const auto& e : report.entries)
        out << e.name << ',' << format_sig(e.sym_kl, 9) << ',' << format_sig(e.rmse, 9) << ',' << e.rows << '\n';
    return out.str();
}

// ---- sweep -----------------------------------------------------------------

const char* coverage_tag_name(CoverageTag t) {
    return t == CoverageTag::Interpolated ? "interpolated" : "extrapolated";
}

SweepResult target_loss_sweep(const std::vector<double>& targets, const std::vector<SweepCase>& cases,
                              const TwinTrainingOptions& training) {
    if (targets.empty()) throw EmptyInput("sweep needs at least one target");
    for (double t : targets)
        if (!(t >= 1e-3 && t <= 10.0)) throw InvalidConfig("sweep targets must lie in [1e-3, 10]");
    SweepResult out;
    for (const auto& c : cases) {
        const Dataset train_rows = all_diagnosis_rows(c.train, training.diagnosis_row_stride);
        const Dataset test_rows = all_diagnosis_rows(c.test, 1);
        std::vector<std::size_t> sizes{train_rows.n_in};
        sizes.insert(sizes.end(), training.hidden.begin(), training.hidden.end());
        sizes.push_back(train_rows.n_out);
        for (double target : targets) {
            TrainHyper h = training.hyper;
            h.target_mse = target;
            auto r = train(NeuralNetModel::create(sizes, training.init_seed), train_rows, Dataset{}, h);
            out.rows.push_back({target, r.report.rmse_train, rmse(predict(r.model, test_rows), test_rows.y), c.tag,
                                r.report.epochs, r.report.reached_target});
        }
    }
    return out;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "target_mse,coverage,train_rmse,test_rmse,epochs,reached_target\n";
    for (const auto& r : result.rows)
        out << format_sig(r.target, 9) << ',' << coverage_tag_name(r.tag) << ',' << format_sig(r.train_rmse, 9) << ','
            << format_sig(r.test_rmse, 9) << ',' << r.epochs << ',' << (r.reached_target ? 1 : 0) << '\n';
    return out.str();
}

// ---- failures and error surface -------------------------------------------

std::vector<FailureTrace> sensor_failure_study(const NeuralNetModel& diagnosis, const EpisodeStore& store,
                                               const std::vector<FailureSpec>& specs, double failure_start,
                                               double onset_threshold) {
    if (store.episodes.empty()) throw EmptyInput("sensor failure study needs episodes");
    const std::size_t rows = store.episodes.front().rows.size();
    for (const auto& e : store.episodes)
        if (e.rows.size() != rows) throw ShapeMismatch("episodes differ in length");
    std::vector<FailureTrace> out;
    for (const auto& spec : specs) {
        FailureTrace tr;
        tr.name = spec.name;
        if (spec.channels.size() == kAllChannels.size()) {
            tr.scram_path = true;
            out.push_back(tr);
            continue;
        }
        std::vector<double> sq(rows, 0.0);
        for (const auto& ep : store.episodes) {
            Dataset d{kDiagnosisInputs, 1, {}, {}};
            for (const auto& r : ep.rows) {
                SensorFrame f;
                f.t = r.t;
                f.values = {r.t_hpp, r.t_lpp, r.t_up};
                if (r.t - ep.scenario.accident_time >= failure_start - 1e-9) {
                    for (auto c : spec.channels) {
                        f.values[static_cast<int>(c)] = NAN;
                        f.valid[static_cast<int>(c)] = false;
                    }
                }
                const auto g = impute(f);
                const double y[1] = {r.t_pfcl};
                d.append(g.values, y);
            }
            const auto pred = predict(diagnosis, d);
            for (std::size_t k = 0; k < rows; ++k) sq[k] += (pred[k] - d.y[k]) * (pred[k] - d.y[k]);
        }
        const auto& first = store.episodes.front();
        for (std::size_t k = 0; k < rows; ++k) {
            tr.t.push_back(first.rows[k].t - first.scenario.accident_time);
            tr.rmse.push_back(std::sqrt(sq[k] / static_cast<double>(store.size())));
            if (!tr.onset && tr.rmse.back() > onset_threshold) tr.onset = tr.t.back();
        }
        out.push_back(std::move(tr));
    }
    return out;
}

namespace {

void summarize(ErrorSurface& s) {
    s.episode_rmse.assign(s.episodes, 0.0);
    for (std::size_t e = 0; e < s.episodes; ++e) {
        double acc = 0.0;
        for (std::size_t k = 0; k < s.rows; ++k) {
            const double v = s.error[e * s.rows + k];
            acc += v * v;
            s.max_abs_error = std::max(s.max_abs_error, std::abs(v));
        }
        s.episode_rmse[e] = s.rows ? std::sqrt(acc / static_cast<double>(s.rows)) : 0.0;
        s.max_rmse = std::max(s.max_rmse, s.episode_rmse[e]);
    }
}

ErrorSurface empty_surface(const EpisodeStore& store) {
    if (store.episodes.empty()) throw EmptyInput("error surface needs episodes");
    ErrorSurface s;
    s.episodes = store.size();
    s.rows = store.episodes.front().rows.size();
    for (const auto& e : store.episodes)
        if (e.rows.size() != s.rows) throw ShapeMismatch("episodes differ in length");
    s.error.assign(s.episodes * s.rows, 0.0);
    return s;
}

}  // namespace

ErrorSurface error_surface(const RowPredictor& predictor, const EpisodeStore& store) {
    ErrorSurface s = empty_surface(store);
    for (std::size_t e = 0; e < s.episodes; ++e)
        for (std::size_t k = 0; k < s.rows; ++k) {
            const auto& r = store.episodes[e].rows[k];
            s.error[e * s.rows + k] = predictor(r) - r.t_pfcl;
        }
    summarize(s);
    return s;
}

ErrorSurface error_surface(const NeuralNetModel& diagnosis, const EpisodeStore& store) {
    ErrorSurface s = empty_surface(store);
    for (std::size_t e = 0; e < s.episodes; ++e) {
        const Dataset d = diagnosis_dataset(store, {e}, 1);
        const auto pred = predict(diagnosis, d);
        for (std::size_t k = 0; k < s.rows; ++k) s.error[e * s.rows + k] = pred[k] - d.y[k];
    }
    summarize(s);
    return s;
}

// ---- confusion runs ----------------------------------------------------------

std::vector<FamilyCase> confusion_family(char family, std::size_t runs, double w0, double accident_time) {
    if (runs == 0) throw EmptyInput("a family needs at least one run");
    std::vector<FamilyCase> out;
    for (std::size_t i = 0; i < runs; ++i) {
        const double f = runs > 1 ? static_cast<double>(i) / static_cast<double>(runs - 1) : 0.0;
        double w1_end = 0.0, m = 1.0, t_d = 10.0;
        switch (family) {
            case 'A':
                w1_end = 0.0;
                m = 1.5 + 8.0 * f;
                t_d = 1.0 + static_cast<double>(i % 10);
                break;
            case 'B':
                w1_end = 0.2 + 0.45 * f;
                m = 1.0;
                t_d = 10.0 - static_cast<double>(i % 10);
                break;
            case 'C':
                w1_end = 0.3;
                m = 0.15 + 0.81 * f;
                t_d = 1.0 + static_cast<double>((3 * i) % 10);
                break;
            default: throw InvalidConfig(std::string("unknown scenario family '") + family + "'");
        }
        const double ramp = w0 * (1.0 - w1_end) / m;
        out.push_back({ScenarioSpec::make(w1_end, ramp, accident_time, w0), t_d});
    }
    return out;
}

CaseClassification classify_transcript(const TranscriptLog& log, double limit) {
    const auto* rec = log.find("recommendation");
    if (!rec) throw IncompleteLog("run ended without a recommendation");
    CaseClassification k;
    k.predicted_max = rec->payload.at("predicted").get<double>();
    k.true_max = outcome_of(log).max_true_t_pfcl;
    k.cell = classify_case(k.true_max, k.predicted_max, limit);
    return k;
}

FamilyResult evaluate_family(const std::string& name, const std::vector<FamilyCase>& cases,
                             const PlantConfig& config, const TwinSet& twins, const RunOptions& base,
                             bool with_checker) {
    FamilyResult r;
    r.name = name;
    r.cases = cases;
    for (const auto& c : cases) {
        RunOptions o = base;
        o.timeline.t_d = c.t_d;
        o.discrepancy.enabled = false;
        const auto log = run_closed_loop(config, c.scenario, twins, Policy::AutoAccept, o);
        const auto k = classify_transcript(log, twins.safety_limit);
        r.predicted_max.push_back(k.predicted_max);
        r.true_max.push_back(k.true_max);
        r.cells.push_back(k.cell);
        r.transcript_hashes.push_back(log.hash());
        if (with_checker) {
            o.discrepancy.enabled = true;
            const auto checked = run_closed_loop(config, c.scenario, twins, Policy::AutoAccept, o);
            bool fired = false;
            for (const auto& e : checked.events)
                if (e.type == "scram" && e.payload.at("reason").get<std::string>() == "discrepancy") fired = true;
            r.checker_scram.push_back(fired);
        }
    }
    r.matrix = confusion_matrix(r.cells);
    return r;
}

CoverageBenchmark build_coverage_benchmark(const PlantConfig& config, std::size_t grid_n, std::size_t test_actions,
                                           std::uint64_t seed) {
    const double w0 = config.nominal_pump_speed;
    const double t_acc = 10010.0;
    const ActionBounds bounds = default_action_bounds(config);
    auto lattice = [&](const std::vector<double>& w1_ends, double ramp, const std::string& name) {
        DatabaseRequest r;
        for (double w : w1_ends) r.scenarios.push_back(ScenarioSpec::make(w, ramp, t_acc, w0));
        r.family_name = name;
        r.bounds = bounds;
        r.grid_n = grid_n;
        r.test_fraction = 0.0;
        return build_database(r, config);
    };
    const auto actions = sample_uniform(bounds, test_actions, seed);
    auto held_out = [&](double w1_end, double ramp, const std::string& name) {
        return build_action_set({ScenarioSpec::make(w1_end, ramp, t_acc, w0)}, actions, config, name);
    };
    CoverageBenchmark b;
    b.train_extrapolated = lattice({0.516, 0.613, 0.710, 0.806, 0.903}, 21.02, "coverage-train-1");
    b.test_extrapolated = held_out(0.032, 21.02, "coverage-test-1");
    b.train_interpolated = lattice({0.097, 0.194, 0.290, 0.387, 0.484, 0.581}, 50.0, "coverage-train-2");
    b.test_interpolated = held_out(0.387, 50.0, "coverage-test-2");
    return b;
}

std::string confusion_csv(const std::vector<FamilyResult>& families) {
    std::ostringstream out;
    out << "family,TP,FP,FN,TN,TPR,FPR,FNR,TNR\n";
    for (const auto& f : families) {
        const auto& m = f.matrix;
        out << f.name << ',' << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',' << format_rate(m.tpr()) << ','
            << format_rate(m.fpr()) << ',' << format_rate(m.fnr()) << ',' << format_rate(m.tnr()) << '\n';
    }
    return out.str();
}

}  // namespace namac
