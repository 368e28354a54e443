// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "flextraj/error.hpp"
#include "flextraj/tensor.hpp"

namespace flextraj {

struct ScheduleParams {
    int steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // When positive, the linear betas define a reference_steps-long chain and
    // the short chain takes every (reference_steps / steps)-th cumulative value,
    // so it spans the same total noise. 0 applies the betas to `steps` directly.
    int reference_steps = 1000;

    bool operator==(const ScheduleParams&) const = default;
};

/// Cumulative signal coefficients alpha_bar[t], t = 0..steps, with
/// alpha_bar[0] = 1 at the clean end and nonincreasing in t.
class DiffusionSchedule {
   public:
    DiffusionSchedule() : DiffusionSchedule(ScheduleParams{}) {}

    explicit DiffusionSchedule(const ScheduleParams& p) : params_(p) {
        if (p.steps < 1) throw Error(ErrorKind::invalid_argument, "schedule needs at least one step");
        if (!(p.beta_start > 0.0 && p.beta_end >= p.beta_start && p.beta_end < 1.0)) {
            throw Error(ErrorKind::invalid_argument, "betas must satisfy 0 < beta_start <= beta_end < 1");
        }
        const int chain = p.reference_steps > 0 ? p.reference_steps : p.steps;
        std::vector<double> full(static_cast<std::size_t>(chain) + 1, 1.0);
        for (int t = 1; t <= chain; ++t) {
            const double frac = chain == 1 ? 1.0 : static_cast<double>(t - 1) / (chain - 1);
            const double beta = p.beta_start + (p.beta_end - p.beta_start) * frac;
            full[static_cast<std::size_t>(t)] = full[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
        }
        alpha_bar_.assign(static_cast<std::size_t>(p.steps) + 1, 1.0);
        for (int t = 1; t <= p.steps; ++t) {
            const auto idx = static_cast<std::size_t>(std::lround(static_cast<double>(t) * chain / p.steps));
            alpha_bar_[static_cast<std::size_t>(t)] = full[idx];
        }
    }

    int steps() const { return params_.steps; }
    const ScheduleParams& params() const { return params_; }
    double alpha_bar(int t) const {
        if (t < 0 || t > params_.steps) throw Error(ErrorKind::invalid_argument, "timestep outside schedule");
        return alpha_bar_[static_cast<std::size_t>(t)];
    }
    const std::vector<double>& alpha_bars() const { return alpha_bar_; }

   private:
    ScheduleParams params_;
    std::vector<double> alpha_bar_;
};

/// x_t = sqrt(alpha) x_0 + sqrt(1 - alpha) eps for a cumulative coefficient alpha.
template <typename T>
Mat<T> add_noise(const Mat<T>& x0, const Mat<T>& eps, double alpha) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw Error(ErrorKind::shape, "add_noise shape mismatch");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::invalid_argument, "alpha must lie in [0, 1]");
    if (alpha == 1.0) return x0;
    if (alpha == 0.0) return eps;
    const T a = static_cast<T>(std::sqrt(alpha));
    const T s = static_cast<T>(std::sqrt(1.0 - alpha));
    return a * x0 + s * eps;
}

template <typename T>
Mat<T> add_noise(const Mat<T>& x0, const Mat<T>& eps, int t, const DiffusionSchedule& schedule) {
    return add_noise(x0, eps, schedule.alpha_bar(t));
}

/// Mean over all elements of the squared difference.
template <typename T>
T diffusion_loss(const Mat<T>& eps, const Mat<T>& pred) {
    if (eps.rows() != pred.rows() || eps.cols() != pred.cols()) {
        throw Error(ErrorKind::shape, "diffusion_loss shape mismatch");
    }
    if (eps.size() == 0) return T(0);
    return (eps - pred).squaredNorm() / static_cast<T>(eps.size());
}

}  // namespace flextraj
