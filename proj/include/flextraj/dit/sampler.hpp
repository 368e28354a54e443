// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "flextraj/dit/model.hpp"
#include "flextraj/dit/schedule.hpp"
#include "flextraj/rng.hpp"

namespace flextraj {

struct SamplerOptions {
    int steps = 50;        // sampling steps, strided over the training chain
    double eta = 0.0;      // 0 gives deterministic DDIM updates
    std::uint64_t seed = 0;
    bool use_kv_cache = true;
};

/// Strided descending timesteps from the chain end down to 1, e.g. 50 -> 1.
inline std::vector<int> sampling_timesteps(int chain_steps, int steps) {
    if (steps < 1) throw Error(ErrorKind::invalid_argument, "sampling needs at least one step");
    steps = std::min(steps, chain_steps);
    std::vector<int> ts;
    for (int i = steps; i >= 1; --i) {
        int t = static_cast<int>(std::lround(static_cast<double>(i) * chain_steps / steps));
        if (ts.empty() || t < ts.back()) ts.push_back(std::max(t, 1));
    }
    return ts;
}

/// eps prediction for the current latent at timestep t.
template <typename T>
using Denoiser = std::function<Mat<T>(const Mat<T>& x_t, int t)>;

/// Optional in-place projection of each clean-sample estimate onto the data
/// range. Early, high-noise estimates can land far outside it; without the
/// projection a deterministic sampler carries that error to the end.
template <typename T>
using CleanProjector = std::function<void(Mat<T>& x0)>;

/// Rows [0, anchor_rows) are pinned to `anchor` before every denoiser call and
/// after the final update (image-to-video anchoring). Starts from seeded noise.
/// With a projector, eps is re-derived from the projected clean estimate so the
/// update stays on the line between them.
template <typename T>
Mat<T> ddim_sample(const Denoiser<T>& denoise, const DiffusionSchedule& schedule, const Mat<T>& anchor,
                   Eigen::Index total_rows, const SamplerOptions& opt, const CleanProjector<T>& project = {}) {
    const auto C = anchor.cols();
    if (anchor.rows() > total_rows) throw Error(ErrorKind::shape, "anchor rows exceed latent rows");
    Rng rng(derive_seed(opt.seed, "sampler"));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](Mat<T>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
    };
    Mat<T> x(total_rows, C);
    draw(x);
    const auto clamp = [&](Mat<T>& m) {
        if (anchor.rows() > 0) m.topRows(anchor.rows()) = anchor;
    };
    const auto ts = sampling_timesteps(schedule.steps(), opt.steps);
    Mat<T> noise(total_rows, C);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        clamp(x);
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double a = schedule.alpha_bar(t);
        const double a_prev = schedule.alpha_bar(t_prev);
        Mat<T> eps = denoise(x, t);
        Mat<T> x0 = (x - static_cast<T>(std::sqrt(1.0 - a)) * eps) / static_cast<T>(std::sqrt(a));
        if (project) {
            project(x0);
            eps = (x - static_cast<T>(std::sqrt(a)) * x0) / static_cast<T>(std::sqrt(1.0 - a));
        }
        double sigma = 0.0;
        if (opt.eta > 0.0 && t_prev > 0) {
            sigma = opt.eta * std::sqrt((1.0 - a_prev) / (1.0 - a) * (1.0 - a / a_prev));
        }
        const double dir = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
        x = static_cast<T>(std::sqrt(a_prev)) * x0 + static_cast<T>(dir) * eps;
        if (sigma > 0.0) {
            draw(noise);
            x += static_cast<T>(sigma) * noise;
        }
    }
    clamp(x);
    return x;
}

/// Samples a latent video from the conditioned model. `first_frame` holds the
/// clean frame-0 tokens (H_l * W_l rows). With `use_kv_cache`, condition
/// keys/values are computed once and reused for every step.
template <typename T>
Mat<T> sample(const ConditionedDiT<T>& model, const LatentShape& shape, const Mat<T>& first_frame,
              const Mat<T>& text, const ConditionInput<T>& cond, const SamplerOptions& opt,
              const CleanProjector<T>& project = {}) {
    if (first_frame.rows() != shape.height * shape.width) {
        throw Error(ErrorKind::shape, "first-frame latent must have H_l * W_l tokens");
    }
    Denoiser<T> denoise;
    KVCache<T> cache;
    if (opt.use_kv_cache) {
        cache = model.precompute_kv_cache(cond, shape);
        denoise = [&](const Mat<T>& x, int t) {
            return model.forward_with_cache(ModelInput<T>{x, shape, t, text, {}, {}}, cache);
        };
    } else {
        denoise = [&](const Mat<T>& x, int t) { return model.forward(ModelInput<T>{x, shape, t, text, cond, {}}); };
    }
    return ddim_sample<T>(denoise, model.schedule(), first_frame, shape.tokens(), opt, project);
}

}  // namespace flextraj
