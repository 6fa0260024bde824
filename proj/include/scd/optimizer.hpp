// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "scd/model.hpp"

namespace scd {

// Plain Adam; moments live alongside the student parameters in TrainState.
struct AdamState {
    ParamSet m;
    ParamSet v;
    int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init_for(const ParamSet& params);
    void apply(ParamSet& params, const ParamSet& grads, double lr);
};

}  // namespace scd
