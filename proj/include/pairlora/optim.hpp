#pragma once

// Named parameters and an AdamW optimizer. Non-trainable params are never
// touched by the optimizer and never receive gradients.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "pairlora/tensor.hpp"

namespace pairlora {

template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    bool trainable = true;

    ParamT() = default;
    ParamT(std::string n, TensorT<T> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), trainable(train) {
        value.set_requires_grad(trainable);
    }

    std::span<T> grad() { return value.grad(); }
    void zero_grad() { value.zero_grad(); }
};

using Param = ParamT<float>;

template <typename T>
struct AdamWOptions {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);
};

template <typename T>
class AdamWT {
public:
    AdamWT(std::vector<ParamT<T>*> params, AdamWOptions<T> opt)
        : params_(std::move(params)), opt_(opt) {
        for (auto* p : params_) {
            if (!p->trainable) continue;
            auto& s = state_[p];
            s.m.assign(size_t(p->value.numel()), T(0));
            s.v.assign(size_t(p->value.numel()), T(0));
        }
    }

    void step() {
        ++step_count_;
        double bc1 = 1.0 - std::pow(double(opt_.beta1), double(step_count_));
        double bc2 = 1.0 - std::pow(double(opt_.beta2), double(step_count_));
        for (auto* p : params_) {
            if (!p->trainable) continue;
            auto& s = state_[p];
            auto w = p->value.data();
            auto g = p->value.grad();
            for (size_t i = 0; i < w.size(); ++i) {
                s.m[i] = opt_.beta1 * s.m[i] + (T(1) - opt_.beta1) * g[i];
                s.v[i] = opt_.beta2 * s.v[i] + (T(1) - opt_.beta2) * g[i] * g[i];
                T mhat = T(double(s.m[i]) / bc1);
                T vhat = T(double(s.v[i]) / bc2);
                w[i] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) +
                                   opt_.weight_decay * w[i]);
            }
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->value.zero_grad();
    }

    int64_t step_count() const { return step_count_; }
    const AdamWOptions<T>& options() const { return opt_; }

private:
    struct Moments {
        std::vector<T> m, v;
    };
    std::vector<ParamT<T>*> params_;
    AdamWOptions<T> opt_;
    std::unordered_map<ParamT<T>*, Moments> state_;
    int64_t step_count_ = 0;
};

using AdamW = AdamWT<float>;

}  // namespace pairlora
