// SPDX-License-Identifier: Apache-2.0
// Exhaustive reference versions of the trajectory metrics. NaN means undefined.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "flextraj/metrics.hpp"

namespace oracle {

using namespace flextraj;

// Brute force: every (generated, source, frame) triple is visited and the
// matching rule is evaluated from scratch for each one.
inline double traj_err(const std::vector<ExtractedTrajectory>& gen, const std::vector<ExtractedTrajectory>& src,
                      Matching m, FrameSize fs) {
    double sum = 0.0;
    long long n = 0;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        int first = -1;
        for (int t = 0; t < gen[i].frames() && first < 0; ++t)
            if (gen[i].valid[t]) first = t;
        std::size_t chosen = src.size();
        double best = INFINITY;
        for (std::size_t j = 0; j < src.size(); ++j) {
            if (m == Matching::by_id) {
                if (src[j].id == gen[i].id && chosen == src.size()) chosen = j;
                continue;
            }
            if (first < 0 || first >= src[j].frames() || !src[j].valid[first]) continue;
            const double dx = gen[i].positions[first][0] - src[j].positions[first][0];
            const double dy = gen[i].positions[first][1] - src[j].positions[first][1];
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d < best) best = d, chosen = j;
        }
        for (std::size_t j = 0; j < src.size(); ++j) {
            if (j != chosen) continue;
            for (int t = 0; t < std::min(gen[i].frames(), src[j].frames()); ++t) {
                if (!gen[i].valid[t] || !src[j].valid[t]) continue;
                const double dx = gen[i].positions[t][0] - src[j].positions[t][0];
                const double dy = gen[i].positions[t][1] - src[j].positions[t][1];
                sum += std::sqrt(dx * dx + dy * dy);
                ++n;
            }
        }
    }
    if (n == 0) return NAN;
    return sum / n / std::sqrt(double(fs.height) * fs.height + double(fs.width) * fs.width);
}

// Brute force with the cosine computed from displacement angles.
inline double traj_sim(const std::vector<ExtractedTrajectory>& gen, const std::vector<ExtractedTrajectory>& src) {
    double total = 0.0;
    int scored = 0;
    for (const auto& g : gen) {
        int valid = 0;
        for (bool v : g.valid) valid += v;
        if (valid < 2) continue;
        std::vector<double> mean(src.size(), INFINITY);
        for (std::size_t j = 0; j < src.size(); ++j) {
            double s = 0.0;
            int n = 0;
            for (int t = 0; t < std::min(g.frames(), src[j].frames()); ++t) {
                if (!g.valid[t] || !src[j].valid[t]) continue;
                s += std::hypot(g.positions[t][0] - src[j].positions[t][0], g.positions[t][1] - src[j].positions[t][1]);
                ++n;
            }
            if (n) mean[j] = s / n;
        }
        const auto best = std::min_element(mean.begin(), mean.end());
        if (best == mean.end() || std::isinf(*best)) continue;
        const auto& s = src[static_cast<std::size_t>(best - mean.begin())];
        double c = 0.0;
        int steps = 0;
        for (int t = 0; t + 1 < std::min(g.frames(), s.frames()); ++t) {
            if (!g.valid[t] || !g.valid[t + 1] || !s.valid[t] || !s.valid[t + 1]) continue;
            const double gx = g.positions[t + 1][0] - g.positions[t][0], gy = g.positions[t + 1][1] - g.positions[t][1];
            const double sx = s.positions[t + 1][0] - s.positions[t][0], sy = s.positions[t + 1][1] - s.positions[t][1];
            if (std::hypot(gx, gy) < 1e-6 || std::hypot(sx, sy) < 1e-6) continue;
            c += std::cos(std::atan2(gy, gx) - std::atan2(sy, sx));
            ++steps;
        }
        if (!steps) continue;
        total += c / steps;
        ++scored;
    }
    return scored ? total / scored : NAN;
}

}  // namespace oracle
