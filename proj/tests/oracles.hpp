// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used only by tests.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "flextraj/condition_encoder.hpp"
#include "flextraj/tensor.hpp"
#include "flextraj/trajectory.hpp"

namespace oracle {

using namespace flextraj;

/// Per-pixel enumeration: every visible point whose rectangle covers the
/// pixel competes, lexicographic (z, track_id, seg_id) minimum wins.
inline Video8 rasterize(const TrajectorySet& set, int t, int fh, int fw, bool color) {
    const int H = set.frame_size.height, W = set.frame_size.width;
    Video8 out(1, H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const Trajectory* best = nullptr;
            double bz = 0;
            for (const auto& tr : set.trajectories) {
                const auto& s = tr.samples[static_cast<std::size_t>(t)];
                if (!s.visible) continue;
                const long cy = static_cast<long>(std::floor(s.position.y + 0.5));
                const long cx = static_cast<long>(std::floor(s.position.x + 0.5));
                const long top = cy - fh / 2, left = cx - fw / 2;
                if (y < top || y >= top + fh || x < left || x >= left + fw) continue;
                const double z = s.position.z;
                bool better = !best || z < bz || (z == bz && tr.track_id < best->track_id) ||
                              (z == bz && tr.track_id == best->track_id && tr.seg_id < best->seg_id);
                if (better) {
                    best = &tr;
                    bz = z;
                }
            }
            if (!best) continue;
            Rgb8 c;
            if (color) {
                if (best->color) {
                    auto byte = [](double v) {
                        return static_cast<std::uint8_t>(std::clamp(std::round(v * 255.0), 0.0, 255.0));
                    };
                    c = {byte((*best->color)[0]), byte((*best->color)[1]), byte((*best->color)[2])};
                }
            } else {
                c.r = static_cast<std::uint8_t>(best->seg_id + 1);
                c.g = static_cast<std::uint8_t>((best->track_id + 1) / 256);
                c.b = static_cast<std::uint8_t>((best->track_id + 1) % 256);
            }
            set_pixel(out, 0, y, x, c);
        }
    }
    return out;
}

inline TrajectorySet random_set(std::mt19937_64& rng, int max_n, int max_frames, int max_side, bool colors) {
    std::uniform_int_distribution<int> side(1, max_side), frames(1, max_frames), count(0, max_n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TrajectorySet set;
    set.frame_size = {side(rng), side(rng)};
    set.frame_count = frames(rng);
    const int n = count(rng);
    std::vector<std::uint32_t> ids(200);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i * 331 % 65535);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int i = 0; i < n; ++i) {
        Trajectory tr;
        tr.track_id = ids[static_cast<std::size_t>(i)];
        tr.seg_id = static_cast<std::uint32_t>(rng() % 6);
        if (colors && unit(rng) < 0.7) tr.color = Color{unit(rng), unit(rng), unit(rng)};
        for (int t = 0; t < set.frame_count; ++t) {
            PointSample s;
            s.position.x = -3.0 + unit(rng) * (set.frame_size.width + 6);
            s.position.y = -3.0 + unit(rng) * (set.frame_size.height + 6);
            // Few distinct depths so ties are common.
            s.position.z = 0.5 + static_cast<double>(rng() % 4);
            s.visible = unit(rng) < 0.85;
            tr.samples.push_back(s);
        }
        set.trajectories.push_back(std::move(tr));
    }
    return set;
}

/// Central finite differences of a scalar function over every entry of `m`.
template <typename F>
Mat<double> numeric_gradient(Mat<double>& m, F&& loss, double h = 1e-6) {
    Mat<double> g(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double keep = m.data()[i];
        m.data()[i] = keep + h;
        const double up = loss();
        m.data()[i] = keep - h;
        const double down = loss();
        m.data()[i] = keep;
        g.data()[i] = (up - down) / (2 * h);
    }
    return g;
}

}  // namespace oracle
