// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "flextraj/latent_codec.hpp"
#include "flextraj/video.hpp"

namespace flextraj {

enum class TrajectorySource { ground_truth, blob_extracted };

constexpr std::string_view to_string(TrajectorySource s) {
    return s == TrajectorySource::ground_truth ? "ground_truth" : "blob_extracted";
}

/// Per-frame pixel positions (u, v) with a validity mask.
struct ExtractedTrajectory {
    std::uint32_t id = 0;
    std::vector<std::array<double, 2>> positions;
    std::vector<bool> valid;
    TrajectorySource source = TrajectorySource::ground_truth;

    int frames() const { return static_cast<int>(positions.size()); }
    int valid_count() const {
        int n = 0;
        for (bool v : valid) n += v;
        return n;
    }
    bool operator==(const ExtractedTrajectory&) const = default;
};

enum class Matching { by_id, nearest_start };

constexpr std::string_view to_string(Matching m) { return m == Matching::by_id ? "by_id" : "nearest_start"; }

inline Matching matching_from_string(std::string_view s) {
    if (s == "by_id") return Matching::by_id;
    if (s == "nearest_start") return Matching::nearest_start;
    throw Error(ErrorKind::parse, "unknown matching '" + std::string(s) + "'");
}

struct MatchPair {
    std::size_t generated = 0;
    std::size_t source = 0;
    int frames = 0;  // frames valid in both
    double mean_distance = 0.0;  // pixels
};

struct TrajErrResult {
    double value = 0.0;       // normalized
    double normalizer = 1.0;  // frame diagonal in pixels
    std::vector<MatchPair> matches;
    long long samples = 0;    // (pair, frame) terms averaged
};

namespace detail {

inline double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

inline bool both_valid(const ExtractedTrajectory& a, const ExtractedTrajectory& b, int t) {
    return t < a.frames() && t < b.frames() && a.valid[static_cast<std::size_t>(t)] &&
           b.valid[static_cast<std::size_t>(t)];
}

inline std::optional<std::size_t> match_one(const ExtractedTrajectory& g, const std::vector<ExtractedTrajectory>& src,
                                            Matching m) {
    if (m == Matching::by_id) {
        for (std::size_t j = 0; j < src.size(); ++j)
            if (src[j].id == g.id) return j;
        return std::nullopt;
    }
    int first = -1;
    for (int t = 0; t < g.frames(); ++t) {
        if (g.valid[static_cast<std::size_t>(t)]) {
            first = t;
            break;
        }
    }
    if (first < 0) return std::nullopt;
    std::optional<std::size_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < src.size(); ++j) {
        if (!both_valid(g, src[j], first)) continue;
        const double d = dist(g.positions[static_cast<std::size_t>(first)], src[j].positions[static_cast<std::size_t>(first)]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

}  // namespace detail

/// Mean Euclidean distance over every (matched pair, frame valid in both)
/// term, divided by the frame diagonal sqrt(H^2 + W^2). Frames where either
/// trajectory is invalid (vanished, not yet appeared) are skipped.
inline TrajErrResult traj_err_report(const std::vector<ExtractedTrajectory>& generated,
                                     const std::vector<ExtractedTrajectory>& source, Matching matching,
                                     FrameSize frame_size) {
    if (frame_size.height < 1 || frame_size.width < 1) throw Error(ErrorKind::invalid_argument, "frame size");
    TrajErrResult r;
    r.normalizer = std::hypot(static_cast<double>(frame_size.height), static_cast<double>(frame_size.width));
    double total = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const auto j = detail::match_one(generated[i], source, matching);
        if (!j) continue;
        MatchPair p{i, *j, 0, 0.0};
        double sum = 0.0;
        const auto& g = generated[i];
        const auto& s = source[*j];
        for (int t = 0; t < std::min(g.frames(), s.frames()); ++t) {
            if (!detail::both_valid(g, s, t)) continue;
            sum += detail::dist(g.positions[static_cast<std::size_t>(t)], s.positions[static_cast<std::size_t>(t)]);
            ++p.frames;
        }
        if (p.frames == 0) continue;
        p.mean_distance = sum / p.frames;
        total += sum;
        r.samples += p.frames;
        r.matches.push_back(p);
    }
    if (r.samples == 0) throw Error(ErrorKind::undefined_metric, "no matchable pairs");
    r.value = total / static_cast<double>(r.samples) / r.normalizer;
    return r;
}

inline double traj_err(const std::vector<ExtractedTrajectory>& generated, const std::vector<ExtractedTrajectory>& source,
                       Matching matching, FrameSize frame_size) {
    return traj_err_report(generated, source, matching, frame_size).value;
}

struct TrajSimResult {
    double value = 0.0;
    std::vector<MatchPair> matches;  // closest counterpart per scored trajectory
    int steps = 0;                   // nondegenerate displacement steps averaged
};

inline constexpr double kMinDisplacement = 1e-6;

/// For each generated trajectory, the closest counterpart is the source with
/// the smallest mean distance over commonly valid frames (lowest index on
/// ties). Cosine similarity of displacement directions is averaged over steps
/// where both move by at least kMinDisplacement, then per trajectory, then
/// over trajectories. Trajectories without a scorable step are left out.
inline TrajSimResult traj_sim_report(const std::vector<ExtractedTrajectory>& generated,
                                     const std::vector<ExtractedTrajectory>& source) {
    TrajSimResult r;
    double total = 0.0;
    int scored = 0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const auto& g = generated[i];
        if (g.valid_count() < 2) continue;
        std::optional<std::size_t> best;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < source.size(); ++j) {
            double sum = 0.0;
            int n = 0;
            for (int t = 0; t < std::min(g.frames(), source[j].frames()); ++t) {
                if (!detail::both_valid(g, source[j], t)) continue;
                sum += detail::dist(g.positions[static_cast<std::size_t>(t)], source[j].positions[static_cast<std::size_t>(t)]);
                ++n;
            }
            if (n > 0 && sum / n < best_d) {
                best_d = sum / n;
                best = j;
            }
        }
        if (!best) continue;
        const auto& s = source[*best];
        double cos_sum = 0.0;
        int steps = 0;
        for (int t = 0; t + 1 < std::min(g.frames(), s.frames()); ++t) {
            if (!detail::both_valid(g, s, t) || !detail::both_valid(g, s, t + 1)) continue;
            const auto& g0 = g.positions[static_cast<std::size_t>(t)];
            const auto& g1 = g.positions[static_cast<std::size_t>(t + 1)];
            const auto& s0 = s.positions[static_cast<std::size_t>(t)];
            const auto& s1 = s.positions[static_cast<std::size_t>(t + 1)];
            const double gx = g1[0] - g0[0], gy = g1[1] - g0[1];
            const double sx = s1[0] - s0[0], sy = s1[1] - s0[1];
            const double gn = std::hypot(gx, gy), sn = std::hypot(sx, sy);
            if (gn < kMinDisplacement || sn < kMinDisplacement) continue;
            // sqrt of the product of squared norms is exact for identical vectors.
            const double denom = std::sqrt((gx * gx + gy * gy) * (sx * sx + sy * sy));
            cos_sum += std::clamp((gx * sx + gy * sy) / denom, -1.0, 1.0);
            ++steps;
        }
        if (steps == 0) continue;
        r.matches.push_back({i, *best, steps, best_d});
        r.steps += steps;
        total += cos_sum / steps;
        ++scored;
    }
    if (scored == 0) throw Error(ErrorKind::undefined_metric, "every displacement step is degenerate");
    r.value = total / scored;
    return r;
}

inline double traj_sim(const std::vector<ExtractedTrajectory>& generated, const std::vector<ExtractedTrajectory>& source) {
    return traj_sim_report(generated, source).value;
}

/// Mean cosine similarity between codec encodings of consecutive frames, a
/// cheap stand-in for an image-embedding consistency score. Each frame is
/// encoded on its own as a one-frame clip.
template <typename T>
double frame_consistency_proxy(const Video<T>& video, const LatentCodec<T>& codec) {
    if (video.frames() < 2) throw Error(ErrorKind::invalid_argument, "frame consistency needs at least 2 frames");
    auto encode_frame = [&](int t) {
        Video<T> one(1, video.height(), video.width());
        auto f = video.frame(t);
        std::copy(f.begin(), f.end(), one.data().begin());
        const auto g = codec.encode(one);
        return Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(g.tokens.data(), g.tokens.size())
            .template cast<double>()
            .eval();
    };
    double sum = 0.0;
    auto prev = encode_frame(0);
    for (int t = 1; t < video.frames(); ++t) {
        auto cur = encode_frame(t);
        const double na = prev.norm(), nb = cur.norm();
        double c = 0.0;
        if (na == 0.0 || nb == 0.0) {
            c = (na == nb) ? 1.0 : 0.0;
        } else {
            c = std::clamp(prev.dot(cur) / (na * nb), -1.0, 1.0);
        }
        sum += c;
        prev = std::move(cur);
    }
    return sum / (video.frames() - 1);
}

/// Centroid tracking by color key: in every frame, the pixels within
/// `tolerance` (Euclidean RGB distance) of a key form that key's blob. Frames
/// with fewer than `min_pixels` matches are invalid. Trajectory ids are key indices.
inline std::vector<ExtractedTrajectory> extract_blob_trajectories(const Video8& video, const std::vector<Rgb8>& keys,
                                                                  double tolerance, int min_pixels = 1) {
    std::vector<ExtractedTrajectory> out(keys.size());
    const double tol2 = tolerance * tolerance;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        out[k].id = static_cast<std::uint32_t>(k);
        out[k].source = TrajectorySource::blob_extracted;
        out[k].positions.assign(static_cast<std::size_t>(video.frames()), {0.0, 0.0});
        out[k].valid.assign(static_cast<std::size_t>(video.frames()), false);
    }
    for (int t = 0; t < video.frames(); ++t) {
        std::vector<double> sx(keys.size(), 0.0), sy(keys.size(), 0.0);
        std::vector<int> n(keys.size(), 0);
        for (int y = 0; y < video.height(); ++y) {
            for (int x = 0; x < video.width(); ++x) {
                const Rgb8 p = get_pixel(video, t, y, x);
                for (std::size_t k = 0; k < keys.size(); ++k) {
                    const double dr = p.r - keys[k].r, dg = p.g - keys[k].g, db = p.b - keys[k].b;
                    if (dr * dr + dg * dg + db * db <= tol2) {
                        sx[k] += x;
                        sy[k] += y;
                        ++n[k];
                    }
                }
            }
        }
        for (std::size_t k = 0; k < keys.size(); ++k) {
            if (n[k] < std::max(1, min_pixels)) continue;
            out[k].positions[static_cast<std::size_t>(t)] = {sx[k] / n[k], sy[k] / n[k]};
            out[k].valid[static_cast<std::size_t>(t)] = true;
        }
    }
    return out;
}

}  // namespace flextraj
