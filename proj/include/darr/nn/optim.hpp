#pragma once

#include <cmath>
#include <vector>

#include "darr/nn/layers.hpp"

namespace darr::nn {

/// Plain stochastic gradient descent (the adaptation-time optimizer).
template <class T>
struct Sgd {
    T lr;

    explicit Sgd(T learning_rate) : lr(learning_rate) {}

    void step(const std::vector<Param<T>*>& params) {
        for (auto* p : params)
            for (std::size_t i = 0; i < p->w.size(); ++i) p->w[i] -= lr * p->g[i];
    }
};

/// Adam with the standard moment decays and no weight decay. State is keyed
/// by parameter order, which is stable for a given model architecture.
template <class T>
struct Adam {
    T lr;
    T beta1 = static_cast<T>(0.9);
    T beta2 = static_cast<T>(0.999);
    T eps = static_cast<T>(1e-8);
    i64 t = 0;
    std::vector<std::vector<T>> m, v;

    explicit Adam(T learning_rate) : lr(learning_rate) {}

    void ensure_state(const std::vector<Param<T>*>& params) {
        if (m.size() == params.size()) return;
        m.clear();
        v.clear();
        for (auto* p : params) {
            m.emplace_back(p->w.size(), T(0));
            v.emplace_back(p->w.size(), T(0));
        }
    }

    void step(const std::vector<Param<T>*>& params) {
        ensure_state(params);
        ++t;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Param<T>* p = params[k];
            auto& mk = m[k];
            auto& vk = v[k];
            for (std::size_t i = 0; i < p->w.size(); ++i) {
                const T g = p->g[i];
                mk[i] = beta1 * mk[i] + (T(1) - beta1) * g;
                vk[i] = beta2 * vk[i] + (T(1) - beta2) * g * g;
                p->w[i] -= lr * (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + eps);
            }
        }
    }
};

}  // namespace darr::nn
