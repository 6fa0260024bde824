// SPDX-License-Identifier: Apache-2.0
#include "scd/optimizer.hpp"

#include <cmath>

#include "scd/errors.hpp"

namespace scd {

AdamState AdamState::init_for(const ParamSet& params) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    return s;
}

void AdamState::apply(ParamSet& params, const ParamSet& grads, double lr) {
    if (params.size() != grads.size() || params.size() != m.size())
        throw ArgumentError("Adam: parameter/gradient/moment sets differ");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params.tensors[i];
        const Tensor& g = grads.tensors[i];
        Tensor& mi = m.tensors[i];
        Tensor& vi = v.tensors[i];
        for (int64_t k = 0; k < p.numel(); ++k) {
            mi[k] = beta1 * mi[k] + (1.0 - beta1) * g[k];
            vi[k] = beta2 * vi[k] + (1.0 - beta2) * g[k] * g[k];
            const double mh = mi[k] / bc1;
            const double vh = vi[k] / bc2;
            p[k] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

}  // namespace scd
