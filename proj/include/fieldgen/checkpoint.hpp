#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fieldgen/optim.hpp"
#include "fieldgen/tensor.hpp"

namespace fieldgen {

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

// Named-tensor container with string metadata, little-endian on disk,
// CRC-protected. Tensors are stored as float64 regardless of training dtype.
class Checkpoint {
  public:
    std::map<std::string, Tensor<double>> tensors;
    std::map<std::string, std::string> meta;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

template <typename T>
void save_params(Checkpoint& ck, const ParamStore<T>& ps, const std::string& prefix) {
    for (const Param<T>* p : ps.all())
        ck.tensors[prefix + p->name] = p->value.template cast<double>();
}

// Creates missing parameters; shape-checks existing ones.
template <typename T>
void load_params(const Checkpoint& ck, ParamStore<T>& ps, const std::string& prefix) {
    for (const auto& [name, tensor] : ck.tensors) {
        if (name.rfind(prefix, 0) != 0) continue;
        std::string bare = name.substr(prefix.size());
        if (!ps.has(bare)) ps.create(bare, tensor.shape);
        Param<T>& p = ps.at(bare);
        if (p.value.shape != tensor.shape)
            throw IoError("checkpoint tensor " + name + " has shape " + tensor.shape_str() +
                          ", model expects " + p.value.shape_str());
        p.value = tensor.template cast<T>();
    }
}

// Optimizer moments, so a resumed run continues the exact trajectory.
template <typename T>
void save_adam(Checkpoint& ck, const Adam<T>& opt, const std::string& prefix) {
    ck.meta[prefix + "steps"] = std::to_string(opt.steps());
    for (const auto& [name, slot] : opt.slots()) {
        ck.tensors[prefix + "m/" + name] = slot.m.template cast<double>();
        ck.tensors[prefix + "v/" + name] = slot.v.template cast<double>();
    }
}

template <typename T>
void load_adam(const Checkpoint& ck, Adam<T>& opt, const std::string& prefix) {
    auto it = ck.meta.find(prefix + "steps");
    if (it == ck.meta.end()) throw IoError("checkpoint has no optimizer state at " + prefix);
    opt.set_steps(std::stoll(it->second));
    const std::string mpre = prefix + "m/";
    for (const auto& [name, tensor] : ck.tensors) {
        if (name.rfind(mpre, 0) != 0) continue;
        std::string bare = name.substr(mpre.size());
        auto& slot = opt.slots()[bare];
        slot.m = tensor.template cast<T>();
        slot.v = ck.tensors.at(prefix + "v/" + bare).template cast<T>();
    }
}

}  // namespace fieldgen
