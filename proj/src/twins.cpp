#include "namac/twins.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "namac/errors.hpp"
#include "namac/util.hpp"

namespace namac {

SensorFrame impute(const SensorFrame& frame) {
    double sum = 0.0;
    int valid = 0;
    for (int c = 0; c < 3; ++c) {
        if (frame.valid[c]) {
            sum += frame.values[c];
            ++valid;
        }
    }
    if (valid == 0) throw AllSensorsFailed("no valid sensor channel at t = " + format_sig(frame.t, 9));
    SensorFrame out = frame;
    const double mean = sum / valid;
    for (int c = 0; c < 3; ++c) {
        if (!out.valid[c]) {
            out.values[c] = mean;
            out.valid[c] = true;
        }
    }
    return out;
}

double diagnose(const NeuralNetModel& model, const SensorFrame& frame) {
    const SensorFrame f = impute(frame);
    return forward(model, f.values)[0];
}

std::vector<double> diagnose(const NeuralNetModel& model, const DiagnosisInput& input) {
    if (input.frames.empty()) throw EmptyInput("diagnosis window is empty");
    std::vector<double> out;
    out.reserve(input.frames.size());
    for (const auto& f : input.frames) out.push_back(diagnose(model, f));
    return out;
}

Dataset diagnosis_dataset(const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                          std::size_t row_stride) {
    Dataset d{kDiagnosisInputs, 1, {}, {}};
    row_stride = std::max<std::size_t>(1, row_stride);
    for (std::size_t e : episodes) {
        const auto& rows = store.episodes.at(e).rows;
        for (std::size_t k = 0; k < rows.size(); k += row_stride) {
            const auto& r = rows[k];
            const double x[3] = {r.t_hpp, r.t_lpp, r.t_up};
            const double y[1] = {r.t_pfcl};
            d.append(x, y);
        }
    }
    return d;
}

double finite_gradient(const std::vector<TimedValue>& series, double dt) {
    if (!(dt > 0.0)) throw InvalidConfig("gradient window must be > 0");
    if (series.empty()) throw InsufficientHistory("empty series");
    const TimedValue& last = series.back();
    const double target = last.t - dt;
    constexpr double slack = 1e-9;
    if (series.front().t > target + slack * std::max(1.0, std::abs(target)))
        throw InsufficientHistory("series spans " + format_sig(last.t - series.front().t, 6) +
                                  " s, window is " + format_sig(dt, 6) + " s");
    // nearest sample to t0 - dt; earlier sample wins a tie
    auto it = std::lower_bound(series.begin(), series.end(), target,
                               [](const TimedValue& v, double t) { return v.t < t; });
    const TimedValue* best = &*std::prev(series.end());
    if (it == series.end()) {
        best = &series.back();
    } else if (it == series.begin()) {
        best = &*it;
    } else {
        const auto prev = std::prev(it);
        best = (target - prev->t) <= (it->t - target) ? &*prev : &*it;
    }
    return (last.value - best->value) / dt;
}

std::array<double, kPrognosisInputs> PrognosisInput::features() const {
    return {t0_value, gradients[0], gradients[1], gradients[2], action.w2_end, action.t_trip};
}

std::array<double, 3> gradient_features(const std::vector<TimedValue>& series) {
    std::array<double, 3> g{};
    for (std::size_t i = 0; i < kGradientWindows.size(); ++i) g[i] = finite_gradient(series, kGradientWindows[i]);
    return g;
}

double prognose(const NeuralNetModel& model, const PrognosisInput& input) {
    const auto x = input.features();
    return forward(model, x)[0];
}

std::vector<TimedValue> episode_history(const EpisodeRecord& episode, double t_d, double dt) {
    const auto& rows = episode.rows;
    if (rows.empty()) throw InsufficientHistory("episode has no rows");
    const auto k = static_cast<std::size_t>(std::llround(t_d / dt));
    if (k >= rows.size()) throw InsufficientHistory("diagnosis window beyond the recorded episode");
    const double longest = kGradientWindows.back();
    const auto prefix = static_cast<std::size_t>(std::llround(longest / dt));
    std::vector<TimedValue> s;
    s.reserve(prefix + k + 1);
    for (std::size_t j = prefix; j > 0; --j)
        s.push_back({rows[0].t - static_cast<double>(j) * dt, rows[0].t_pfcl});
    for (std::size_t i = 0; i <= k; ++i) s.push_back({rows[i].t, rows[i].t_pfcl});
    return s;
}

Dataset prognosis_dataset(const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                          const std::vector<double>& diagnosis_windows, double dt) {
    Dataset d{kPrognosisInputs, 1, {}, {}};
    for (std::size_t e : episodes) {
        const auto& ep = store.episodes.at(e);
        for (double t_d : diagnosis_windows) {
            const auto hist = episode_history(ep, t_d, dt);
            PrognosisInput in{hist.back().value, gradient_features(hist), ep.action};
            const auto x = in.features();
            const double y[1] = {ep.max_t_pfcl};
            d.append(x, y);
        }
    }
    return d;
}

std::vector<StrategyCandidate> enumerate_strategies(const ActionBounds& bounds, std::size_t n_w2,
                                                    std::size_t n_trip, double diagnosed_t_pfcl) {
    bounds.validate();
    if (n_w2 == 0 || n_trip == 0) throw InvalidBounds("strategy grid needs at least one point per axis");
    const auto w2 = linspace(bounds.w2_min, bounds.w2_max, n_w2);
    const auto trip = linspace(bounds.trip_min, bounds.trip_max, n_trip);
    std::vector<StrategyCandidate> out;
    out.reserve(n_w2 * n_trip);
    for (double w : w2)
        for (double tt : trip) out.push_back({{w, tt}, tt <= diagnosed_t_pfcl});
    return out;
}

MarginTable assess(const std::vector<StrategyCandidate>& candidates, const std::vector<double>& predictions,
                   double limit, std::size_t n_w2, std::size_t n_trip) {
    if (candidates.empty()) throw EmptyInput("no strategies to assess");
    if (candidates.size() != predictions.size()) throw LengthMismatch("one prediction per candidate required");
    if (n_w2 * n_trip != candidates.size()) throw ShapeMismatch("grid shape does not match the candidate count");
    MarginTable t;
    t.limit = limit;
    t.n_w2 = n_w2;
    t.n_trip = n_trip;
    t.rows.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double m = limit - predictions[i];
        t.rows.push_back({candidates[i].action, candidates[i].immediate, predictions[i], m, m > 0.0});
    }
    return t;
}

MarginTable with_limit(const MarginTable& table, double limit) {
    MarginTable t = table;
    t.limit = limit;
    for (auto& r : t.rows) {
        r.margin = limit - r.predicted;
        r.safe = r.margin > 0.0;
    }
    return t;
}

LimitSurface limit_surface(const MarginTable& table) {
    LimitSurface s;
    const auto safe = std::count_if(table.rows.begin(), table.rows.end(), [](const MarginRow& r) { return r.safe; });
    s.all_safe = safe == static_cast<std::ptrdiff_t>(table.rows.size());
    s.all_unsafe = safe == 0;
    if (s.degenerate()) return s;
    for (std::size_t i = 0; i < table.n_w2; ++i) {
        for (std::size_t j = 0; j < table.n_trip; ++j) {
            const std::size_t a = i * table.n_trip + j;
            if (j + 1 < table.n_trip && table.rows[a].safe != table.rows[a + 1].safe) s.edges.push_back({a, a + 1});
            if (i + 1 < table.n_w2 && table.rows[a].safe != table.rows[a + table.n_trip].safe)
                s.edges.push_back({a, a + table.n_trip});
        }
    }
    return s;
}

namespace {

bool better(const MarginRow& a, const MarginRow& b) {
    if (a.margin != b.margin) return a.margin > b.margin;
    if (a.action.w2_end != b.action.w2_end) return a.action.w2_end > b.action.w2_end;
    return a.action.t_trip < b.action.t_trip;
}

}  // namespace

Recommendation recommend(const MarginTable& table) {
    Recommendation r;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (!table.rows[i].safe) continue;
        if (!best || better(table.rows[i], table.rows[*best])) best = i;
    }
    if (!best) {
        r.kind = Recommendation::Kind::Scram;
        double top = -INFINITY;
        for (const auto& row : table.rows) top = std::max(top, row.margin);
        r.margin = table.rows.empty() ? 0.0 : top;
        r.predicted = table.limit - r.margin;
        r.rationale = "no candidate keeps the predicted peak below " + format_sig(table.limit, 6) + " degC; SCRAM";
        return r;
    }
    const auto& row = table.rows[*best];
    r.kind = Recommendation::Kind::Act;
    r.action = row.action;
    r.immediate = row.immediate;
    r.row = best;
    r.margin = row.margin;
    r.predicted = row.predicted;
    std::ostringstream why;
    why << "pump 2 to " << format_sig(row.action.w2_end * 100.0, 4) << "% at T_trip "
        << format_sig(row.action.t_trip, 6) << " degC" << (row.immediate ? " (immediate)" : "")
        << "; predicted peak " << format_sig(row.predicted, 6) << " degC, margin " << format_sig(row.margin, 4)
        << " degC";
    r.rationale = why.str();
    return r;
}

std::string margin_table_csv(const MarginTable& table) {
    std::ostringstream out;
    out << kMarginCsvHeader << '\n';
    for (const auto& r : table.rows)
        out << format_sig(r.action.w2_end, 9) << ',' << format_sig(r.action.t_trip, 9) << ','
            << format_sig(r.predicted, 9) << ',' << format_sig(r.margin, 9) << ',' << (r.safe ? 1 : 0) << '\n';
    return out.str();
}

MarginTable assess_strategies(const TwinSet& twins, double diagnosed_t_pfcl, const std::array<double, 3>& gradients) {
    const auto candidates = enumerate_strategies(twins.bounds, twins.grid_n, twins.grid_n, diagnosed_t_pfcl);
    Dataset d{kPrognosisInputs, 1, {}, {}};
    d.x.reserve(candidates.size() * kPrognosisInputs);
    d.y.assign(candidates.size(), 0.0);
    for (const auto& c : candidates) {
        const auto f = PrognosisInput{diagnosed_t_pfcl, gradients, c.action}.features();
        d.x.insert(d.x.end(), f.begin(), f.end());
    }
    const auto pred = predict(twins.prognosis, d);
    return assess(candidates, pred, twins.safety_limit, twins.grid_n, twins.grid_n);
}

const char* twin_name(TwinKind kind) { return kind == TwinKind::Diagnosis ? "diagnosis" : "prognosis"; }

Dataset twin_dataset(TwinKind kind, const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                     const TwinTrainingOptions& options, double dt) {
    if (kind == TwinKind::Diagnosis) return diagnosis_dataset(store, episodes, options.diagnosis_row_stride);
    return prognosis_dataset(store, episodes, options.diagnosis_windows, dt);
}

TwinTraining train_twin(TwinKind kind, const EpisodeStore& store, const TwinTrainingOptions& options, double dt) {
    const auto train_eps = store.indices(Split::Train);
    const auto test_eps = store.indices(Split::Test);
    if (train_eps.empty()) throw EmptySelection("store has no training episodes");
    std::vector<std::size_t> fit_eps, val_eps;
    const std::size_t every = options.validation_every;
    for (std::size_t i = 0; i < train_eps.size(); ++i)
        (every > 1 && i % every == every - 1 ? val_eps : fit_eps).push_back(train_eps[i]);

    const Dataset fit = twin_dataset(kind, store, fit_eps, options, dt);
    const Dataset val = twin_dataset(kind, store, val_eps, options, dt);
    std::vector<std::size_t> sizes{fit.n_in};
    sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
    sizes.push_back(fit.n_out);
    NeuralNetModel model = NeuralNetModel::create(sizes, options.init_seed);

    TwinTraining out;
    out.result = train(std::move(model), fit, val, options.hyper);
    out.train_rows = fit.rows();
    if (!test_eps.empty()) {
        // Full-resolution test rows regardless of the training stride.
        TwinTrainingOptions test_opts = options;
        test_opts.diagnosis_row_stride = 1;
        const Dataset test = twin_dataset(kind, store, test_eps, test_opts, dt);
        out.test_rows = test.rows();
        out.test_rmse = rmse(predict(out.result.model, test), test.y);
    }
    return out;
}

}  // namespace namac
