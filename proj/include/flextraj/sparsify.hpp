// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string_view>
#include <vector>

#include "flextraj/rng.hpp"
#include "flextraj/trajectory.hpp"

namespace flextraj {

enum class SpatialMode { random, segment };
enum class TemporalMode { uniform, random };

struct SparsitySpec {
    double p_s = 1.0;
    SpatialMode spatial_mode = SpatialMode::random;
    double p_t = 1.0;
    TemporalMode temporal_mode = TemporalMode::uniform;
    std::uint64_t seed = 0;
};

enum class JitterMode { shift, resize_crop };
enum class CropMode { explicit_offset, center, random };

struct JitterSpec {
    JitterMode mode = JitterMode::shift;
    double dx = 0.0;
    double dy = 0.0;
    double scale = 1.25;
    CropMode crop = CropMode::center;
    double ox = 0.0;
    double oy = 0.0;
    std::uint64_t seed = 0;
};

constexpr std::string_view to_string(SpatialMode m) { return m == SpatialMode::random ? "random" : "segment"; }
constexpr std::string_view to_string(TemporalMode m) { return m == TemporalMode::uniform ? "uniform" : "random"; }
constexpr std::string_view to_string(JitterMode m) { return m == JitterMode::shift ? "shift" : "resize_crop"; }

namespace detail {

inline void check_fraction(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::invalid_argument, std::string(name) + " must lie in [0, 1]");
}

// Guards floor/ceil against products like 0.1 * 100 landing a hair off an integer.
constexpr double kCountEps = 1e-9;

}  // namespace detail

/// Keeps a subset of whole trajectories. Random mode keeps exactly floor(p_s * N)
/// by taking a prefix of one seeded permutation, so lower p_s with the same seed
/// always yields a subset. Segment mode removes whole seg_id groups, largest
/// first, until at most ceil(p_s * N) trajectories remain.
inline TrajectorySet spatial_sparsify(const TrajectorySet& set, const SparsitySpec& spec) {
    detail::check_fraction(spec.p_s, "p_s");
    const std::size_t n = set.trajectories.size();
    TrajectorySet out{{}, set.frame_count, set.frame_size};
    std::vector<char> keep(n, 0);

    if (spec.spatial_mode == SpatialMode::random) {
        auto k = static_cast<std::size_t>(std::floor(spec.p_s * static_cast<double>(n) + detail::kCountEps));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        Rng rng(derive_seed(spec.seed, "spatial_sparsify"));
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < k; ++i) keep[perm[i]] = 1;
    } else {
        auto limit = static_cast<std::size_t>(std::ceil(spec.p_s * static_cast<double>(n) - detail::kCountEps));
        std::map<std::uint32_t, std::size_t> group_size;
        for (const auto& tr : set.trajectories) ++group_size[tr.seg_id];
        std::vector<std::pair<std::uint32_t, std::size_t>> groups(group_size.begin(), group_size.end());
        std::stable_sort(groups.begin(), groups.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        std::size_t retained = n;
        std::map<std::uint32_t, bool> dropped;
        for (const auto& [seg, size] : groups) {
            if (retained <= limit) break;
            dropped[seg] = true;
            retained -= size;
        }
        for (std::size_t i = 0; i < n; ++i) keep[i] = dropped.count(set.trajectories[i].seg_id) ? 0 : 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) out.trajectories.push_back(set.trajectories[i]);
    }
    return out;
}

inline std::size_t temporal_keep_count(double p_t, int frame_count) {
    return static_cast<std::size_t>(std::max(1L, std::lround(p_t * frame_count)));
}

/// Evenly spaced frame indices round(linspace(0, T-1, k)).
inline std::vector<int> uniform_frame_indices(int frame_count, std::size_t k) {
    std::vector<int> idx;
    if (k == 1) return {0};
    for (std::size_t i = 0; i < k; ++i) {
        double v = static_cast<double>(frame_count - 1) * static_cast<double>(i) / static_cast<double>(k - 1);
        idx.push_back(static_cast<int>(std::lround(v)));
    }
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

struct TemporalSparsifyResult {
    TrajectorySet set;
    std::vector<bool> kept;  // per frame
};

/// Keeps k = max(1, round(p_t * T)) frames. Samples on dropped frames become
/// invisible so the rendered condition frame is black; frame count is unchanged.
inline TemporalSparsifyResult temporal_sparsify(const TrajectorySet& set, const SparsitySpec& spec) {
    detail::check_fraction(spec.p_t, "p_t");
    const int T = set.frame_count;
    TemporalSparsifyResult out{set, std::vector<bool>(static_cast<std::size_t>(std::max(T, 0)), false)};
    if (T <= 0) return out;
    const std::size_t k = std::min<std::size_t>(temporal_keep_count(spec.p_t, T), static_cast<std::size_t>(T));

    if (spec.temporal_mode == TemporalMode::uniform) {
        for (int f : uniform_frame_indices(T, k)) out.kept[static_cast<std::size_t>(f)] = true;
    } else {
        out.kept[0] = true;
        std::vector<int> rest(static_cast<std::size_t>(T - 1));
        std::iota(rest.begin(), rest.end(), 1);
        Rng rng(derive_seed(spec.seed, "temporal_sparsify"));
        std::shuffle(rest.begin(), rest.end(), rng);
        for (std::size_t i = 0; i + 1 < k; ++i) out.kept[static_cast<std::size_t>(rest[i])] = true;
    }
    for (auto& tr : out.set.trajectories) {
        for (std::size_t t = 0; t < tr.samples.size(); ++t) {
            if (!out.kept[t]) tr.samples[t].visible = false;
        }
    }
    return out;
}

inline bool in_frame(double u, double v, FrameSize fs) {
    return u >= -0.5 && u < fs.width - 0.5 && v >= -0.5 && v < fs.height - 0.5;
}

/// Spatially misaligns a trajectory set against its frame: a constant shift, or
/// a resize by `scale` followed by a crop back to the original size.
inline TrajectorySet unaligned_jitter(const TrajectorySet& set, const JitterSpec& spec) {
    const FrameSize fs = set.frame_size;
    double ox = 0.0, oy = 0.0;
    if (spec.mode == JitterMode::resize_crop) {
        if (!(spec.scale > 1.0)) throw Error(ErrorKind::invalid_argument, "resize_crop jitter needs scale > 1");
        const double slack_x = fs.width * spec.scale - fs.width;
        const double slack_y = fs.height * spec.scale - fs.height;
        switch (spec.crop) {
            case CropMode::explicit_offset: ox = spec.ox; oy = spec.oy; break;
            case CropMode::center: ox = slack_x / 2.0; oy = slack_y / 2.0; break;
            case CropMode::random: {
                Rng rng(derive_seed(spec.seed, "resize_crop"));
                ox = std::floor(uniform(rng, 0.0, slack_x + 1.0));
                oy = std::floor(uniform(rng, 0.0, slack_y + 1.0));
                ox = std::min(ox, std::floor(slack_x));
                oy = std::min(oy, std::floor(slack_y));
                break;
            }
        }
    }
    TrajectorySet out = set;
    for (auto& tr : out.trajectories) {
        for (auto& s : tr.samples) {
            auto& p = s.position;
            if (spec.mode == JitterMode::shift) {
                p.x += spec.dx;
                p.y += spec.dy;
            } else {
                p.x = p.x * spec.scale - ox;
                p.y = p.y * spec.scale - oy;
            }
            if (!in_frame(p.x, p.y, fs)) s.visible = false;
        }
    }
    return out;
}

}  // namespace flextraj
