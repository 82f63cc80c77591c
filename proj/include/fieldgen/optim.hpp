#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fieldgen/rng.hpp"
#include "fieldgen/tensor.hpp"

namespace fieldgen {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

// Owns all parameters of a model. Layer structs hold stable Param pointers.
template <typename T>
class ParamStore {
  public:
    Param<T>& create(const std::string& name, std::vector<int> shape) {
        if (map_.count(name)) throw ConfigError("duplicate parameter " + name);
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->value = Tensor<T>(shape);
        p->grad = Tensor<T>(std::move(shape));
        Param<T>& ref = *p;
        map_.emplace(name, std::move(p));
        return ref;
    }

    Param<T>& create_gaussian(const std::string& name, std::vector<int> shape, Rng& rng, T std) {
        Param<T>& p = create(name, std::move(shape));
        for (auto& v : p.value.data) v = static_cast<T>(rng.normal()) * std;
        return p;
    }

    Param<T>& at(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw ConfigError("unknown parameter " + name);
        return *it->second;
    }
    const Param<T>& at(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw ConfigError("unknown parameter " + name);
        return *it->second;
    }
    bool has(const std::string& name) const { return map_.count(name) != 0; }

    void zero_grad() {
        for (auto& [name, p] : map_) p->grad.zero();
    }

    // name-ordered, so iteration order is deterministic
    std::vector<Param<T>*> all() {
        std::vector<Param<T>*> out;
        out.reserve(map_.size());
        for (auto& [name, p] : map_) out.push_back(p.get());
        return out;
    }
    std::vector<const Param<T>*> all() const {
        std::vector<const Param<T>*> out;
        out.reserve(map_.size());
        for (auto& [name, p] : map_) out.push_back(p.get());
        return out;
    }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (auto& [name, p] : map_) n += p->value.numel();
        return n;
    }

  private:
    std::map<std::string, std::unique_ptr<Param<T>>> map_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Moments are keyed by parameter name, so the optimizer
// survives parameters being created before the first step in any order.
template <typename T>
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore<T>& ps) {
        ++t_;
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T corr1 = T(1) - std::pow(b1, static_cast<T>(t_));
        const T corr2 = T(1) - std::pow(b2, static_cast<T>(t_));
        for (Param<T>* p : ps.all()) {
            if (!all_finite(p->grad))
                throw NumericalError("non-finite gradient in parameter " + p->name);
            Slot& s = slots_[p->name];
            if (s.m.numel() != p->value.numel()) {
                s.m = Tensor<T>(p->value.shape);
                s.v = Tensor<T>(p->value.shape);
            }
            for (std::size_t i = 0; i < p->value.data.size(); ++i) {
                T g = p->grad.data[i];
                s.m.data[i] = b1 * s.m.data[i] + (T(1) - b1) * g;
                s.v.data[i] = b2 * s.v.data[i] + (T(1) - b2) * g * g;
                T mhat = s.m.data[i] / corr1;
                T vhat = s.v.data[i] / corr2;
                p->value.data[i] -=
                    static_cast<T>(cfg_.lr) * mhat / (std::sqrt(vhat) + static_cast<T>(cfg_.eps));
            }
        }
    }

    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }

    struct Slot {
        Tensor<T> m, v;
    };
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

  private:
    AdamConfig cfg_;
    std::map<std::string, Slot> slots_;
    std::int64_t t_ = 0;
};

// ema <- decay*ema + (1-decay)*params, elementwise over matching names.
template <typename T>
void ema_update(ParamStore<T>& ema, const ParamStore<T>& params, double decay) {
    const T d = static_cast<T>(decay);
    for (const Param<T>* p : params.all()) {
        Tensor<T>& shadow = ema.at(p->name).value;
        if (!shadow.same_shape(p->value))
            throw ConfigError("ema shape mismatch for " + p->name);
        for (std::size_t i = 0; i < shadow.data.size(); ++i)
            shadow.data[i] = d * shadow.data[i] + (T(1) - d) * p->value.data[i];
    }
}

// Relative-window profile: at step t the averaging window is rel_window*t
// steps, giving decay 1 - 1/max(1, rel_window*t).
struct EmaProfile {
    double rel_window = 0.05;
    double decay_at(std::int64_t t) const {
        double window = rel_window * static_cast<double>(t);
        if (window <= 1.0) return 0.0;
        return 1.0 - 1.0 / window;
    }
};

template <typename T>
class Ema {
  public:
    explicit Ema(EmaProfile profile = {}) : profile_(profile) {}

    void init_from(const ParamStore<T>& params) {
        for (const Param<T>* p : params.all()) {
            if (!shadow_.has(p->name)) shadow_.create(p->name, p->value.shape);
            shadow_.at(p->name).value = p->value;
        }
    }

    void update(const ParamStore<T>& params) {
        ++t_;
        ema_update(shadow_, params, profile_.decay_at(t_));
    }

    void copy_to(ParamStore<T>& params) const {
        for (const Param<T>* p : shadow_.all()) params.at(p->name).value = p->value;
    }

    ParamStore<T>& store() { return shadow_; }
    const ParamStore<T>& store() const { return shadow_; }
    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }

  private:
    EmaProfile profile_;
    ParamStore<T> shadow_;
    std::int64_t t_ = 0;
};

}  // namespace fieldgen
