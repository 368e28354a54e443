// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <unordered_set>
#include <vector>

#include "flextraj/error.hpp"
#include "flextraj/video.hpp"

namespace flextraj {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 1.0;

    bool operator==(const Vec3&) const = default;
};

using Color = std::array<double, 3>;

/// One observation of a tracked point. For pixel-space trajectories x, y are
/// pixel coordinates (pixel centers at integers) and z is a depth ordering key.
struct PointSample {
    Vec3 position;
    bool visible = true;

    bool operator==(const PointSample&) const = default;
};

struct Trajectory {
    std::uint32_t track_id = 0;
    std::uint32_t seg_id = 0;
    std::optional<Color> color;
    std::vector<PointSample> samples;

    bool operator==(const Trajectory&) const = default;
};

struct TrajectorySet {
    std::vector<Trajectory> trajectories;
    int frame_count = 0;
    FrameSize frame_size;

    bool operator==(const TrajectorySet&) const = default;

    bool has_color() const {
        for (const auto& tr : trajectories) {
            if (tr.color) return true;
        }
        return false;
    }
};

struct Violation {
    std::optional<std::size_t> trajectory;  // empty for set-level rules
    std::string rule;
    std::string detail;

    bool operator==(const Violation&) const = default;
};

inline constexpr std::uint32_t kMaxSegId = 254;
inline constexpr std::uint32_t kMaxTrackId = 65534;

inline std::vector<Violation> validate_set(const TrajectorySet& set) {
    std::vector<Violation> out;
    if (set.frame_count < 1) {
        out.push_back({std::nullopt, "frame count", "T must be >= 1"});
    }
    if (set.frame_size.height < 1 || set.frame_size.width < 1) {
        out.push_back({std::nullopt, "frame size", "H and W must be >= 1"});
    }
    std::map<std::uint32_t, std::size_t> first_seen;
    for (std::size_t i = 0; i < set.trajectories.size(); ++i) {
        const auto& tr = set.trajectories[i];
        auto [it, inserted] = first_seen.emplace(tr.track_id, i);
        if (!inserted) {
            out.push_back({i, "duplicate track_id",
                           "track_id " + std::to_string(tr.track_id) + " already used by trajectory " +
                               std::to_string(it->second)});
        }
        if (static_cast<int>(tr.samples.size()) != set.frame_count) {
            out.push_back({i, "length mismatch",
                           std::to_string(tr.samples.size()) + " samples for T=" + std::to_string(set.frame_count)});
        }
        if (tr.seg_id > kMaxSegId || tr.track_id > kMaxTrackId) {
            out.push_back({i, "id out of range", "seg_id <= 254 and track_id <= 65534 required"});
        }
        if (tr.color) {
            for (double c : *tr.color) {
                if (!(c >= 0.0 && c <= 1.0)) {
                    out.push_back({i, "color out of range", "color components must lie in [0, 1]"});
                    break;
                }
            }
        }
        for (std::size_t t = 0; t < tr.samples.size(); ++t) {
            const auto& s = tr.samples[t];
            const auto& p = s.position;
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
                out.push_back({i, "non-finite position", "frame " + std::to_string(t)});
                break;
            }
            if (s.visible && !(p.z > 0.0)) {
                out.push_back({i, "nonpositive depth", "visible sample at frame " + std::to_string(t) + " has z <= 0"});
                break;
            }
        }
    }
    return out;
}

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
};

/// Pinhole projection of a camera-space point; returns (u, v, z).
inline Vec3 project_point(const Vec3& p, const CameraIntrinsics& k) {
    if (!(p.z > 0.0)) throw Error(ErrorKind::projection, "cannot project a point with nonpositive depth");
    if (!(k.fx > 0.0) || !(k.fy > 0.0)) throw Error(ErrorKind::projection, "focal lengths must be positive");
    return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z};
}

/// Segmentation id in red, trajectory id split over green (high byte) and blue
/// (low byte). Both are offset by one so (0, 0, 0) stays reserved for background.
inline Rgb8 encode_ids_to_rgb(std::int64_t seg_id, std::int64_t track_id) {
    if (seg_id < 0 || seg_id > kMaxSegId) {
        throw Error(ErrorKind::encoding, "seg_id " + std::to_string(seg_id) + " outside [0, 254]");
    }
    if (track_id < 0 || track_id > kMaxTrackId) {
        throw Error(ErrorKind::encoding, "track_id " + std::to_string(track_id) + " outside [0, 65534]");
    }
    auto code = static_cast<std::uint32_t>(track_id + 1);
    return {static_cast<std::uint8_t>(seg_id + 1), static_cast<std::uint8_t>(code / 256),
            static_cast<std::uint8_t>(code % 256)};
}

struct IdPair {
    std::uint32_t seg_id = 0;
    std::uint32_t track_id = 0;

    bool operator==(const IdPair&) const = default;
};

/// Inverse of encode_ids_to_rgb; empty for background or non-code pixels.
inline std::optional<IdPair> decode_rgb_to_ids(Rgb8 c) {
    std::uint32_t code = c.g * 256u + c.b;
    if (c.r == 0 || code == 0) return std::nullopt;
    return IdPair{c.r - 1u, code - 1u};
}

// ---------------------------------------------------------------------------
// Text container:
//   flextraj-trajectories <version>
//   N T H W
//   track <track_id> seg <seg_id> color <r> <g> <b>|color none
//   <t> <x> <y> <z> <visible>          (T lines per track)

inline constexpr int kTrajectoryFormatVersion = 1;

namespace detail {

inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw Error(ErrorKind::invalid_argument, "cannot format number");
    return std::string(buf.data(), ptr);
}

inline double parse_double(const std::string& token, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw Error(ErrorKind::parse, std::string("malformed ") + what + ": '" + token + "'");
    }
    return v;
}

inline long long parse_int(const std::string& token, const char* what) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw Error(ErrorKind::parse, std::string("malformed ") + what + ": '" + token + "'");
    }
    return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

/// Next non-empty line that is not a comment.
inline bool next_line(std::istream& in, std::string& line) {
    while (std::getline(in, line)) {
        auto pos = line.find_first_not_of(" \t\r");
        if (pos == std::string::npos || line[pos] == '#') continue;
        return true;
    }
    return false;
}

}  // namespace detail

inline void write_trajectories(std::ostream& out, const TrajectorySet& set) {
    using detail::format_double;
    out << "flextraj-trajectories " << kTrajectoryFormatVersion << '\n';
    out << set.trajectories.size() << ' ' << set.frame_count << ' ' << set.frame_size.height << ' '
        << set.frame_size.width << '\n';
    for (const auto& tr : set.trajectories) {
        out << "track " << tr.track_id << " seg " << tr.seg_id << " color";
        if (tr.color) {
            for (double c : *tr.color) out << ' ' << format_double(c);
        } else {
            out << " none";
        }
        out << '\n';
        for (std::size_t t = 0; t < tr.samples.size(); ++t) {
            const auto& s = tr.samples[t];
            out << t << ' ' << format_double(s.position.x) << ' ' << format_double(s.position.y) << ' '
                << format_double(s.position.z) << ' ' << (s.visible ? 1 : 0) << '\n';
        }
    }
}

inline TrajectorySet read_trajectories(std::istream& in) {
    using namespace detail;
    std::string line;
    if (!next_line(in, line)) throw Error(ErrorKind::parse, "empty trajectory file");
    auto head = split_ws(line);
    if (head.size() != 2 || head[0] != "flextraj-trajectories") {
        throw Error(ErrorKind::parse, "missing 'flextraj-trajectories' header");
    }
    if (parse_int(head[1], "version") != kTrajectoryFormatVersion) {
        throw Error(ErrorKind::parse, "unsupported trajectory format version " + head[1]);
    }
    if (!next_line(in, line)) throw Error(ErrorKind::parse, "missing N T H W line");
    auto dims = split_ws(line);
    if (dims.size() != 4) throw Error(ErrorKind::parse, "expected 'N T H W'");
    auto n = parse_int(dims[0], "N");
    TrajectorySet set;
    set.frame_count = static_cast<int>(parse_int(dims[1], "T"));
    set.frame_size = {static_cast<int>(parse_int(dims[2], "H")), static_cast<int>(parse_int(dims[3], "W"))};
    if (n < 0 || set.frame_count < 0) throw Error(ErrorKind::parse, "negative counts in header");
    set.trajectories.reserve(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        if (!next_line(in, line)) throw Error(ErrorKind::parse, "truncated file: missing track header");
        auto h = split_ws(line);
        if (h.size() < 6 || h[0] != "track" || h[2] != "seg" || h[4] != "color") {
            throw Error(ErrorKind::parse, "malformed track header: '" + line + "'");
        }
        Trajectory tr;
        auto track = parse_int(h[1], "track_id");
        auto seg = parse_int(h[3], "seg_id");
        if (track < 0 || seg < 0 || track > 0xffffffffLL || seg > 0xffffffffLL) {
            throw Error(ErrorKind::parse, "ids must be nonnegative 32-bit integers");
        }
        tr.track_id = static_cast<std::uint32_t>(track);
        tr.seg_id = static_cast<std::uint32_t>(seg);
        if (h.size() == 6 && h[5] == "none") {
            tr.color = std::nullopt;
        } else if (h.size() == 8) {
            tr.color = Color{parse_double(h[5], "color"), parse_double(h[6], "color"), parse_double(h[7], "color")};
        } else {
            throw Error(ErrorKind::parse, "malformed color in track header: '" + line + "'");
        }
        tr.samples.reserve(static_cast<std::size_t>(set.frame_count));
        for (int t = 0; t < set.frame_count; ++t) {
            if (!next_line(in, line)) throw Error(ErrorKind::parse, "truncated file: missing samples");
            auto s = split_ws(line);
            if (s.size() != 5) throw Error(ErrorKind::parse, "expected 't x y z visible': '" + line + "'");
            if (parse_int(s[0], "frame index") != t) {
                throw Error(ErrorKind::parse, "frame index out of order in track " + h[1]);
            }
            PointSample ps;
            ps.position = {parse_double(s[1], "x"), parse_double(s[2], "y"), parse_double(s[3], "z")};
            auto vis = parse_int(s[4], "visible");
            if (vis != 0 && vis != 1) throw Error(ErrorKind::parse, "visible flag must be 0 or 1");
            ps.visible = vis == 1;
            tr.samples.push_back(ps);
        }
        set.trajectories.push_back(std::move(tr));
    }
    return set;
}

inline std::string trajectories_to_string(const TrajectorySet& set) {
    std::ostringstream ss;
    write_trajectories(ss, set);
    return ss.str();
}

inline TrajectorySet trajectories_from_string(const std::string& text) {
    std::istringstream ss(text);
    return read_trajectories(ss);
}

}  // namespace flextraj
