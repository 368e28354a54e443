// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "flextraj/rng.hpp"
#include "flextraj/sparsify.hpp"

namespace flextraj {

enum class Stage { complete = 0, dense = 1, sparse = 2, unaligned = 3 };
enum class CurriculumMode { annealing, random_mix, sparse2dense };

constexpr std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::complete: return "complete";
        case Stage::dense: return "dense";
        case Stage::sparse: return "sparse";
        case Stage::unaligned: return "unaligned";
    }
    return "?";
}

constexpr std::string_view to_string(CurriculumMode m) {
    switch (m) {
        case CurriculumMode::annealing: return "annealing";
        case CurriculumMode::random_mix: return "randommix";
        case CurriculumMode::sparse2dense: return "sparse2dense";
    }
    return "?";
}

inline CurriculumMode curriculum_mode_from_string(std::string_view s) {
    if (s == "annealing") return CurriculumMode::annealing;
    if (s == "randommix" || s == "random_mix") return CurriculumMode::random_mix;
    if (s == "sparse2dense") return CurriculumMode::sparse2dense;
    throw Error(ErrorKind::parse, "unknown curriculum mode '" + std::string(s) + "'");
}

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
    bool operator==(const Interval&) const = default;
};

struct CurriculumConfig {
    std::array<int, 4> stage_steps{60, 120, 700, 200};  // complete, dense, sparse, unaligned
    double p_c = 0.5;
    Interval p_s_range{0.0, 1.0};
    Interval p_t_range{0.0, 1.0};
    double lr_aligned = 1e-4;
    double lr_unaligned = 1e-5;
    CurriculumMode mode = CurriculumMode::annealing;
    std::uint64_t seed = 0;
    // Jitter magnitudes for the unaligned stage (pixels, resize factor range).
    double max_shift = 12.0;
    Interval scale_range{1.1, 1.5};

    int total_steps() const { return stage_steps[0] + stage_steps[1] + stage_steps[2] + stage_steps[3]; }
    bool operator==(const CurriculumConfig&) const = default;
};

inline void validate(const CurriculumConfig& c) {
    for (int s : c.stage_steps) {
        if (s <= 0) throw Error(ErrorKind::invalid_argument, "stage_steps must be positive");
    }
    detail::check_fraction(c.p_c, "p_c");
    for (const auto* r : {&c.p_s_range, &c.p_t_range}) {
        if (!(r->lo >= 0.0 && r->lo <= r->hi && r->hi <= 1.0)) {
            throw Error(ErrorKind::invalid_argument, "sampling intervals must satisfy 0 <= lo <= hi <= 1");
        }
    }
    if (!(c.lr_aligned >= 0.0) || !(c.lr_unaligned >= 0.0) || c.lr_unaligned > c.lr_aligned) {
        throw Error(ErrorKind::invalid_argument, "need 0 <= lr_unaligned <= lr_aligned");
    }
    if (!(c.max_shift >= 0.0) || !(c.scale_range.lo > 1.0 && c.scale_range.hi >= c.scale_range.lo)) {
        throw Error(ErrorKind::invalid_argument, "jitter ranges: max_shift >= 0 and 1 < scale lo <= hi");
    }
}

/// Stage active at `step`, or nullopt once step reaches the total (training
/// complete). Annealing walks complete -> dense -> sparse -> unaligned;
/// sparse2dense walks the same boundaries in reverse stage order; random_mix
/// picks a stage uniformly per step from a stream keyed by (seed, step), so the
/// answer never depends on call order.
inline std::optional<Stage> stage_for_step(long long step, const CurriculumConfig& c) {
    if (step < 0) throw Error(ErrorKind::invalid_argument, "step must be nonnegative");
    if (step >= c.total_steps()) return std::nullopt;
    if (c.mode == CurriculumMode::random_mix) {
        Rng rng(derive_seed(derive_seed(c.seed, "random_mix"), static_cast<std::uint64_t>(step)));
        return static_cast<Stage>(uniform_int(rng, 0, 3));
    }
    long long end = 0;
    int idx = 0;
    for (; idx < 4; ++idx) {
        end += c.stage_steps[static_cast<std::size_t>(idx)];
        if (step < end) break;
    }
    return static_cast<Stage>(c.mode == CurriculumMode::sparse2dense ? 3 - idx : idx);
}

struct StageDirective {
    Stage stage = Stage::complete;
    bool drop_color = false;
    std::optional<SparsitySpec> sparsity;
    std::optional<JitterSpec> jitter;
    double lr = 0.0;

    bool operator==(const StageDirective& o) const {
        auto same_sparsity = [](const std::optional<SparsitySpec>& a, const std::optional<SparsitySpec>& b) {
            if (a.has_value() != b.has_value()) return false;
            return !a || (a->p_s == b->p_s && a->spatial_mode == b->spatial_mode && a->p_t == b->p_t &&
                          a->temporal_mode == b->temporal_mode && a->seed == b->seed);
        };
        auto same_jitter = [](const std::optional<JitterSpec>& a, const std::optional<JitterSpec>& b) {
            if (a.has_value() != b.has_value()) return false;
            return !a || (a->mode == b->mode && a->dx == b->dx && a->dy == b->dy && a->scale == b->scale &&
                          a->crop == b->crop && a->ox == b->ox && a->oy == b->oy && a->seed == b->seed);
        };
        return stage == o.stage && drop_color == o.drop_color && lr == o.lr && same_sparsity(sparsity, o.sparsity) &&
               same_jitter(jitter, o.jitter);
    }
};

/// Draws the per-step augmentation for a stage. Stages are cumulative: dense
/// adds color dropout, sparse adds spatial/temporal thinning, unaligned adds a
/// jitter and the reduced learning rate.
inline StageDirective sample_directive(Stage stage, const CurriculumConfig& c, Rng& rng) {
    StageDirective d;
    d.stage = stage;
    d.lr = stage == Stage::unaligned ? c.lr_unaligned : c.lr_aligned;
    if (stage == Stage::complete) return d;
    d.drop_color = bernoulli(rng, c.p_c);
    if (stage == Stage::dense) return d;
    SparsitySpec s;
    s.p_s = uniform(rng, c.p_s_range.lo, c.p_s_range.hi);
    s.spatial_mode = bernoulli(rng, 0.5) ? SpatialMode::segment : SpatialMode::random;
    s.p_t = uniform(rng, c.p_t_range.lo, c.p_t_range.hi);
    s.temporal_mode = bernoulli(rng, 0.5) ? TemporalMode::random : TemporalMode::uniform;
    s.seed = rng();
    d.sparsity = s;
    if (stage == Stage::sparse) return d;
    JitterSpec j;
    if (bernoulli(rng, 0.5)) {
        j.mode = JitterMode::shift;
        j.dx = uniform(rng, -c.max_shift, c.max_shift);
        j.dy = uniform(rng, -c.max_shift, c.max_shift);
    } else {
        j.mode = JitterMode::resize_crop;
        j.scale = uniform(rng, c.scale_range.lo, c.scale_range.hi);
        j.crop = CropMode::random;
    }
    j.seed = rng();
    d.jitter = j;
    return d;
}

}  // namespace flextraj
