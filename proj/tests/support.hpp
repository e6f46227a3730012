#pragma once

// Small trained twins shared by the module tests: an 8x8 table2 database and
// twins trained with the default recipe. Built once per test binary.

#include "namac/twins.hpp"

namespace namac::testing {

struct SmallWorld {
    PlantConfig config;
    EpisodeStore store;
    TwinSet twins;
    TwinTraining diagnosis;
    TwinTraining prognosis;
};

inline const SmallWorld& small_world() {
    static const SmallWorld world = [] {
        SmallWorld w;
        DatabaseRequest r;
        r.scenarios = {table2_scenario(w.config)};
        r.bounds = default_action_bounds(w.config);
        r.grid_n = 8;
        w.store = build_database(r, w.config);
        TwinTrainingOptions o;
        o.hyper.max_epochs = 400;
        o.hyper.target_mse = 1e-2;
        w.diagnosis = train_twin(TwinKind::Diagnosis, w.store, o, w.config.dt);
        o.hyper.target_mse = 1e-3;
        o.hyper.max_epochs = 3000;
        w.prognosis = train_twin(TwinKind::Prognosis, w.store, o, w.config.dt);
        w.twins = {w.diagnosis.result.model, w.prognosis.result.model, r.bounds, 685.0, 32};
        return w;
    }();
    return world;
}

}  // namespace namac::testing
