#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mcinr/matrix.hpp"

namespace mcinr {

// Standard Adam with bias correction. Moments are kept per parameter array,
// in the same canonical order the owning network enumerates them.
template <class T>
struct AdamState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::int64_t step_count = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);

    static AdamState like(const std::vector<std::span<T>>& params) {
        AdamState s;
        s.first_moment.reserve(params.size());
        s.second_moment.reserve(params.size());
        for (const auto& p : params) {
            s.first_moment.emplace_back(p.size(), T(0));
            s.second_moment.emplace_back(p.size(), T(0));
        }
        return s;
    }
};

template <class T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state, T lr) {
    if (!(lr >= T(0))) throw std::runtime_error("adam_step: lr must be >= 0");
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw std::runtime_error("adam_step: parameter/gradient/state group counts differ");
    }
    state.step_count += 1;
    const T bc1 = T(1) - std::pow(state.beta1, T(state.step_count));
    const T bc2 = T(1) - std::pow(state.beta2, T(state.step_count));
    for (std::size_t g = 0; g < params.size(); ++g) {
        auto p = params[g];
        auto gr = grads[g];
        auto& m = state.first_moment[g];
        auto& v = state.second_moment[g];
        if (p.size() != gr.size() || p.size() != m.size()) {
            throw std::runtime_error("adam_step: shape mismatch in parameter group " + std::to_string(g));
        }
        check_finite(gr, "adam_step gradients");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * gr[i];
            v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * gr[i] * gr[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace mcinr
