// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <tuple>
#include <vector>

#include "flextraj/trajectory.hpp"
#include "flextraj/video.hpp"

namespace flextraj {

struct Footprint {
    int height = 1;
    int width = 1;
    double scale = 0.5;

    bool operator==(const Footprint&) const = default;
};

/// Point size as a function of sampling density: s = min(sqrt(H / x / 1.7), 4),
/// footprint (floor(2s), floor(3s)). Denser grids get smaller points.
inline Footprint point_footprint(double frame_height, double grid_size) {
    if (!(frame_height >= 1.0) || !(grid_size >= 1.0)) {
        throw Error(ErrorKind::invalid_argument, "point_footprint needs H >= 1 and grid size >= 1");
    }
    double s = std::min(std::sqrt(frame_height / grid_size / 1.7), 4.0);
    // 1e-9 absorbs decimal representation error in 1.7 at exact integer boundaries.
    return {static_cast<int>(std::floor(2.0 * s + 1e-9)), static_cast<int>(std::floor(3.0 * s + 1e-9)), s};
}

/// Grid size implied by a point count when points are spread uniformly.
inline double effective_grid_size(std::size_t point_count) {
    return std::max(1.0, std::round(std::sqrt(static_cast<double>(point_count))));
}

inline int round_half_up(double v) {
    return static_cast<int>(std::floor(v + 0.5));
}

struct ConditionFrame {
    Video8 id;                    // single frame
    std::optional<Video8> color;  // present when rendered with color
};

struct ConditionVideoPair {
    Video8 id_video;
    std::optional<Video8> color_video;
    Footprint footprint;
    double grid_size = 1.0;
};

namespace detail {

// Compositing priority: nearer depth wins, then smaller track id, then smaller seg id.
using DepthKey = std::tuple<double, std::uint32_t, std::uint32_t>;

inline Rgb8 color_to_rgb8(const std::optional<Color>& c) {
    if (!c) return {};
    return {unit_to_byte((*c)[0]), unit_to_byte((*c)[1]), unit_to_byte((*c)[2])};
}

}  // namespace detail

/// Renders frame t of the ID-coded video (and, if requested, the color-cue video).
/// Each visible point paints an h x w rectangle whose top-left corner sits at
/// (round(v) - h/2, round(u) - w/2); overlaps resolve to the nearest point.
inline ConditionFrame rasterize_frame(const TrajectorySet& set, int t, const Footprint& fp, bool with_color) {
    if (t < 0 || t >= set.frame_count) {
        throw Error(ErrorKind::invalid_argument, "frame index " + std::to_string(t) + " outside [0, T)");
    }
    const int H = set.frame_size.height;
    const int W = set.frame_size.width;
    ConditionFrame out{Video8(1, H, W), std::nullopt};
    if (with_color) out.color = Video8(1, H, W);

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<detail::DepthKey> best(static_cast<std::size_t>(H) * W, {inf, 0u, 0u});
    std::vector<int> owner(static_cast<std::size_t>(H) * W, -1);

    for (std::size_t i = 0; i < set.trajectories.size(); ++i) {
        const auto& tr = set.trajectories[i];
        const auto& s = tr.samples[static_cast<std::size_t>(t)];
        if (!s.visible) continue;
        const int top = round_half_up(s.position.y) - fp.height / 2;
        const int left = round_half_up(s.position.x) - fp.width / 2;
        const int y0 = std::max(top, 0), y1 = std::min(top + fp.height, H);
        const int x0 = std::max(left, 0), x1 = std::min(left + fp.width, W);
        const detail::DepthKey key{s.position.z, tr.track_id, tr.seg_id};
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                auto p = static_cast<std::size_t>(y) * W + x;
                if (key < best[p]) {
                    best[p] = key;
                    owner[p] = static_cast<int>(i);
                }
            }
        }
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int o = owner[static_cast<std::size_t>(y) * W + x];
            if (o < 0) continue;
            const auto& tr = set.trajectories[static_cast<std::size_t>(o)];
            set_pixel(out.id, 0, y, x, encode_ids_to_rgb(tr.seg_id, tr.track_id));
            if (out.color) set_pixel(*out.color, 0, y, x, detail::color_to_rgb8(tr.color));
        }
    }
    return out;
}

inline ConditionVideoPair encode_set(const TrajectorySet& set, double grid_size) {
    if (auto v = validate_set(set); !v.empty()) {
        throw Error(ErrorKind::invalid_argument, "invalid trajectory set: " + v.front().rule + " (" + v.front().detail + ")");
    }
    const int T = set.frame_count;
    const int H = set.frame_size.height;
    const int W = set.frame_size.width;
    ConditionVideoPair out;
    out.footprint = point_footprint(H, grid_size);
    out.grid_size = grid_size;
    out.id_video = Video8(T, H, W);
    const bool with_color = set.has_color();
    if (with_color) out.color_video = Video8(T, H, W);
    for (int t = 0; t < T; ++t) {
        auto frame = rasterize_frame(set, t, out.footprint, with_color);
        std::copy(frame.id.data().begin(), frame.id.data().end(), out.id_video.frame(t).begin());
        if (with_color) {
            std::copy(frame.color->data().begin(), frame.color->data().end(), out.color_video->frame(t).begin());
        }
    }
    return out;
}

}  // namespace flextraj
