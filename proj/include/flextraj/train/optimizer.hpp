// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>

#include "flextraj/dit/model.hpp"

namespace flextraj {

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Which parameter groups an optimizer may touch, indexed by ParamGroup.
using GroupMask = std::array<bool, 4>;

inline constexpr GroupMask kConditionGroups{false, true, true, true};
inline constexpr GroupMask kBaseGroups{true, false, false, false};

/// Decoupled weight decay Adam over the groups in `mask`; other tensors are
/// never written, so frozen weights stay bitwise intact.
template <typename T>
class AdamW {
   public:
    AdamW(const ModelParams<T>& like, GroupMask mask, AdamWParams p = {})
        : mask_(mask), p_(p), m_(like.zeros_like()), v_(like.zeros_like()) {}

    const GroupMask& mask() const { return mask_; }
    long long steps() const { return t_; }

    void step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
        std::map<std::string, const Mat<T>*> g;
        grads.visit([&](const std::string& name, const Mat<T>& m, ParamGroup) { g[name] = &m; });
        std::map<std::string, Mat<T>*> m1, m2;
        m_.visit([&](const std::string& name, Mat<T>& m, ParamGroup) { m1[name] = &m; });
        v_.visit([&](const std::string& name, Mat<T>& m, ParamGroup) { m2[name] = &m; });
        const T b1 = static_cast<T>(p_.beta1), b2 = static_cast<T>(p_.beta2);
        params.visit([&](const std::string& name, Mat<T>& w, ParamGroup group) {
            if (!mask_[static_cast<std::size_t>(group)]) return;
            const auto& gr = *g.at(name);
            auto& m = *m1.at(name);
            auto& v = *m2.at(name);
            m = b1 * m + (T(1) - b1) * gr;
            v = b2 * v + (T(1) - b2) * gr.cwiseProduct(gr);
            if (lr == 0.0) return;
            const T step = static_cast<T>(lr / c1);
            const T root_c2 = static_cast<T>(std::sqrt(c2));
            const T eps = static_cast<T>(p_.eps);
            if (p_.weight_decay != 0.0) w *= static_cast<T>(1.0 - lr * p_.weight_decay);
            w.array() -= step * m.array() / ((v.array().sqrt() / root_c2) + eps);
        });
    }

    /// Moments as named tensors for checkpoint side storage; the step count
    /// travels separately (checkpoint metadata) so it stays exact.
    void save_state(std::map<std::string, Mat<T>>& extra) const {
        m_.visit([&](const std::string& name, const Mat<T>& m, ParamGroup g) {
            if (mask_[static_cast<std::size_t>(g)]) extra["adam.m." + name] = m;
        });
        v_.visit([&](const std::string& name, const Mat<T>& m, ParamGroup g) {
            if (mask_[static_cast<std::size_t>(g)]) extra["adam.v." + name] = m;
        });
    }

    void load_state(const std::map<std::string, Mat<T>>& extra, long long steps) {
        auto load = [&](const std::string& prefix, ModelParams<T>& dst) {
            dst.visit([&](const std::string& name, Mat<T>& m, ParamGroup g) {
                if (!mask_[static_cast<std::size_t>(g)]) return;
                auto it = extra.find(prefix + name);
                if (it == extra.end()) throw Error(ErrorKind::parse, "checkpoint lacks optimizer state " + prefix + name);
                if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
                    throw Error(ErrorKind::parse, "optimizer state shape mismatch for " + name);
                }
                m = it->second;
            });
        };
        load("adam.m.", m_);
        load("adam.v.", v_);
        t_ = steps;
    }

   private:
    GroupMask mask_;
    AdamWParams p_;
    ModelParams<T> m_, v_;
    long long t_ = 0;
};

}  // namespace flextraj
