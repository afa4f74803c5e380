#pragma once

#include <string>

#include "advsyn/checkpoint.hpp"
#include "advsyn/network.hpp"
#include "advsyn/optim.hpp"

namespace advsyn::detail {

inline void pack_store(Checkpoint& ck, const std::string& prefix, const ParamStore& store) {
    for (const auto& [name, t] : store.params) ck.tensors.emplace(prefix + "/param/" + name, t);
    for (const auto& [name, st] : store.bn) {
        ck.tensors.emplace(prefix + "/bnstat/" + name + "/mean", st.running_mean);
        ck.tensors.emplace(prefix + "/bnstat/" + name + "/var", st.running_var);
    }
}

inline void unpack_store(const Checkpoint& ck, const std::string& prefix, ParamStore& store) {
    for (auto& [name, t] : store.params) {
        const Tensor& src = ck.require_tensor(prefix + "/param/" + name);
        if (!src.same_shape(t)) {
            throw DataError("checkpoint: tensor '" + name + "' has shape " + src.shape_string() +
                            ", expected " + t.shape_string());
        }
        t = src;
    }
    for (auto& [name, st] : store.bn) {
        st.running_mean = ck.require_tensor(prefix + "/bnstat/" + name + "/mean");
        st.running_var = ck.require_tensor(prefix + "/bnstat/" + name + "/var");
    }
}

inline void pack_adam(Checkpoint& ck, const std::string& prefix, const AdamOptimizer& opt) {
    for (const auto& [name, st] : opt.states()) {
        ck.tensors.emplace(prefix + "/adam/" + name + "/m", st.m);
        ck.tensors.emplace(prefix + "/adam/" + name + "/v", st.v);
        ck.meta.emplace(prefix + "/adam/" + name + "/t", static_cast<uint64_t>(st.t));
    }
}

inline void unpack_adam(const Checkpoint& ck, const std::string& prefix, AdamOptimizer& opt) {
    opt.states().clear();
    const std::string want = prefix + "/adam/";
    for (const auto& [key, t] : ck.tensors) {
        if (key.rfind(want, 0) != 0 || key.size() < 2 || key.substr(key.size() - 2) != "/m") {
            continue;
        }
        const std::string name = key.substr(want.size(), key.size() - want.size() - 2);
        AdamState st = AdamState::init(t.shape());
        st.m = t;
        st.v = ck.require_tensor(want + name + "/v");
        st.t = static_cast<int64_t>(ck.require_meta(want + name + "/t"));
        opt.states().emplace(name, std::move(st));
    }
}

}  // namespace advsyn::detail
