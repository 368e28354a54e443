// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "flextraj/io/atomic_file.hpp"
#include "flextraj/metrics.hpp"
#include "flextraj/rng.hpp"
#include "flextraj/sparsify.hpp"
#include "flextraj/trajectory.hpp"
#include "flextraj/video.hpp"

namespace flextraj {

enum class ShapeKind { rect, circle };
enum class PathKind { linear, circular, keyframed };

constexpr std::string_view to_string(ShapeKind s) { return s == ShapeKind::rect ? "rect" : "circle"; }

struct Keyframe {
    int frame = 0;
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Keyframe&) const = default;
};

/// Center path in pixel coordinates. Linear: start + velocity * t. Circular:
/// center + radius (cos, sin)(phase + omega t). Keyframed: piecewise linear,
/// held constant outside the keyed range.
struct ScenePath {
    PathKind kind = PathKind::linear;
    std::array<double, 2> start{0.0, 0.0};
    std::array<double, 2> velocity{0.0, 0.0};
    std::array<double, 2> center{0.0, 0.0};
    double radius = 0.0;
    double omega = 0.0;
    double phase = 0.0;
    std::vector<Keyframe> keys;

    std::array<double, 2> at(int t) const {
        switch (kind) {
            case PathKind::linear: return {start[0] + velocity[0] * t, start[1] + velocity[1] * t};
            case PathKind::circular: {
                const double a = phase + omega * t;
                return {center[0] + radius * std::cos(a), center[1] + radius * std::sin(a)};
            }
            case PathKind::keyframed: {
                if (t <= keys.front().frame) return {keys.front().x, keys.front().y};
                for (std::size_t i = 1; i < keys.size(); ++i) {
                    if (t <= keys[i].frame) {
                        const auto& a = keys[i - 1];
                        const auto& b = keys[i];
                        const double f = static_cast<double>(t - a.frame) / (b.frame - a.frame);
                        return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
                    }
                }
                return {keys.back().x, keys.back().y};
            }
        }
        return {0.0, 0.0};
    }
    bool operator==(const ScenePath&) const = default;
};

struct SceneObject {
    ShapeKind shape = ShapeKind::rect;
    double size = 10.0;  // rect side or circle diameter, pixels
    Rgb8 color{255, 255, 255};
    double depth = 1.0;
    ScenePath path;
    int appear_frame = 0;
    std::uint32_t seg_id = 0;
    bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
    FrameSize frame_size{48, 64};
    int frame_count = 17;
    std::vector<SceneObject> objects;
    Rgb8 background{24, 24, 24};
    std::uint64_t seed = 0;  // offsets track ids so scenes do not share an id layout
    int points_per_side = 5;
    bool operator==(const SceneSpec&) const = default;
};

inline void validate(const SceneSpec& s) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_argument, "scene spec: " + m); };
    if (s.frame_count < 2) fail("frame_count must be at least 2");
    if (s.frame_size.height < 1 || s.frame_size.width < 1) fail("frame size must be positive");
    if (s.points_per_side < 1 || s.points_per_side > 16) fail("points_per_side must lie in [1, 16]");
    if (s.objects.size() > 4) fail("at most 4 objects");
    for (const auto& o : s.objects) {
        if (!(o.size >= 1.0) || o.size > std::min(s.frame_size.height, s.frame_size.width)) fail("object size must fit the frame");
        if (!(o.depth > 0.0)) fail("object depth must be positive");
        if (o.appear_frame < 0 || o.appear_frame >= s.frame_count) fail("appear_frame must lie in [0, T)");
        if (o.seg_id > kMaxSegId) fail("seg_id out of range");
        if (o.path.kind == PathKind::keyframed) {
            if (o.path.keys.empty()) fail("keyframed path needs keys");
            for (std::size_t i = 1; i < o.path.keys.size(); ++i)
                if (o.path.keys[i].frame <= o.path.keys[i - 1].frame) fail("keyframes must be strictly increasing");
        }
    }
}

inline bool covers(const SceneObject& o, std::array<double, 2> c, double x, double y) {
    const double h = o.size / 2.0;
    if (o.shape == ShapeKind::rect) return x >= c[0] - h && x < c[0] + h && y >= c[1] - h && y < c[1] + h;
    const double dx = x - c[0], dy = y - c[1];
    return dx * dx + dy * dy < h * h;
}

/// Each pixel shows the nearest covering object, the same result as painting
/// back to front (the earlier object wins an exact depth tie).
inline Video8 render_scene(const SceneSpec& spec) {
    validate(spec);
    Video8 v(spec.frame_count, spec.frame_size.height, spec.frame_size.width);
    std::vector<std::size_t> order(spec.objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Nearest first; the first covering object is the visible one.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return spec.objects[a].depth < spec.objects[b].depth; });
    for (int t = 0; t < spec.frame_count; ++t) {
        for (int y = 0; y < spec.frame_size.height; ++y) {
            for (int x = 0; x < spec.frame_size.width; ++x) {
                Rgb8 c = spec.background;
                for (std::size_t i : order) {
                    const auto& o = spec.objects[i];
                    if (t < o.appear_frame) continue;
                    if (covers(o, o.path.at(t), x, y)) {
                        c = o.color;
                        break;
                    }
                }
                set_pixel(v, t, y, x, c);
            }
        }
    }
    return v;
}

/// Object center paths; a frame is valid once the object has appeared and its
/// center lies inside the frame.
inline std::vector<ExtractedTrajectory> center_paths(const SceneSpec& spec) {
    std::vector<ExtractedTrajectory> out;
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        const auto& o = spec.objects[k];
        ExtractedTrajectory tr;
        tr.id = static_cast<std::uint32_t>(k);
        for (int t = 0; t < spec.frame_count; ++t) {
            const auto c = o.path.at(t);
            tr.positions.push_back(c);
            tr.valid.push_back(t >= o.appear_frame && c[0] >= -0.5 && c[1] >= -0.5 && c[0] < spec.frame_size.width - 0.5 &&
                               c[1] < spec.frame_size.height - 0.5);
        }
        out.push_back(std::move(tr));
    }
    return out;
}

inline std::uint32_t track_id_for(const SceneSpec& spec, std::size_t object, int point) {
    // High green code per object keeps ID-coded pixels far from the black background.
    const auto base = static_cast<std::uint32_t>(256 * (240 - 50 * object));
    return base + static_cast<std::uint32_t>(point * 9) + static_cast<std::uint32_t>(spec.seed % 9);
}

/// points_per_side^2 interior points per object on a grid spanning +-0.3 size
/// around the center, which keeps every point inside both rects and circles.
inline TrajectorySet scene_trajectories(const SceneSpec& spec) {
    validate(spec);
    TrajectorySet set{{}, spec.frame_count, spec.frame_size};
    const int n = spec.points_per_side;
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        const auto& o = spec.objects[k];
        for (int i = 0; i < n * n; ++i) {
            const double fx = n == 1 ? 0.0 : -0.3 + 0.6 * (i % n) / (n - 1);
            const double fy = n == 1 ? 0.0 : -0.3 + 0.6 * (i / n) / (n - 1);
            Trajectory tr;
            tr.track_id = track_id_for(spec, k, i);
            tr.seg_id = o.seg_id;
            tr.color = Color{o.color.r / 255.0, o.color.g / 255.0, o.color.b / 255.0};
            for (int t = 0; t < spec.frame_count; ++t) {
                const auto c = o.path.at(t);
                const Vec3 p{c[0] + fx * o.size, c[1] + fy * o.size, o.depth};
                const bool visible = t >= o.appear_frame && in_frame(p.x, p.y, spec.frame_size);
                tr.samples.push_back({p, visible});
            }
            set.trajectories.push_back(std::move(tr));
        }
    }
    return set;
}

struct NamedColor {
    const char* name;
    Rgb8 rgb;
};

inline constexpr std::array<NamedColor, 6> kPalette{{{"red", {230, 40, 40}},
                                                      {"green", {40, 210, 70}},
                                                      {"blue", {60, 100, 250}},
                                                      {"yellow", {240, 220, 40}},
                                                      {"magenta", {220, 50, 220}},
                                                      {"cyan", {40, 220, 220}}}};

inline std::string color_name(Rgb8 c) {
    const NamedColor* best = &kPalette[0];
    double best_d = 1e18;
    for (const auto& p : kPalette) {
        const double d = std::pow(c.r - p.rgb.r, 2) + std::pow(c.g - p.rgb.g, 2) + std::pow(c.b - p.rgb.b, 2);
        if (d < best_d) {
            best_d = d;
            best = &p;
        }
    }
    return best->name;
}

inline std::string motion_phrase(const SceneObject& o, int frame_count) {
    if (o.path.kind == PathKind::circular && std::abs(o.path.omega) > 1e-9) return "in a circle";
    const auto a = o.path.at(o.appear_frame);
    const auto b = o.path.at(frame_count - 1);
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    if (std::hypot(dx, dy) < 2.0) return "staying still";
    std::string h = std::abs(dx) >= 0.4 * std::hypot(dx, dy) ? (dx > 0 ? "right" : "left") : "";
    std::string v = std::abs(dy) >= 0.4 * std::hypot(dx, dy) ? (dy > 0 ? "down" : "up") : "";
    if (!h.empty() && !v.empty()) return v + " and " + h;
    return h.empty() ? v : h;
}

/// "a {color} {shape} moving {direction}" per object, joined with "and".
inline std::string scene_caption(const SceneSpec& spec) {
    std::string out;
    for (const auto& o : spec.objects) {
        if (!out.empty()) out += " and ";
        out += "a " + color_name(o.color) + " " + (o.shape == ShapeKind::rect ? "square" : "circle") + " moving " +
               motion_phrase(o, spec.frame_count);
    }
    return out.empty() ? "an empty scene" : out;
}

struct Scene {
    Video8 video;
    TrajectorySet trajectories;
    std::string caption;
};

inline Scene generate_scene(const SceneSpec& spec) {
    return {render_scene(spec), scene_trajectories(spec), scene_caption(spec)};
}

struct RandomSceneParams {
    FrameSize frame_size{48, 64};
    int frame_count = 17;
    int min_objects = 1;
    int max_objects = 2;
    double min_size = 10.0;
    double max_size = 16.0;
    double late_probability = 0.15;  // chance that an object appears after frame 0
    double min_travel = 10.0;        // linear/keyframed start-to-end distance, pixels
};

/// Seeded random scene: distinct palette colors, distinct depths, paths that
/// keep every object fully inside the frame.
inline SceneSpec random_scene_spec(std::uint64_t seed, const RandomSceneParams& p = {}) {
    Rng rng(derive_seed(seed, "scene"));
    SceneSpec s;
    s.frame_size = p.frame_size;
    s.frame_count = p.frame_count;
    s.seed = seed;
    std::array<int, kPalette.size()> colors{};
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
    std::shuffle(colors.begin(), colors.end(), rng);
    const int n = uniform_int(rng, p.min_objects, p.max_objects);
    const double W = p.frame_size.width, H = p.frame_size.height;
    for (int k = 0; k < n; ++k) {
        SceneObject o;
        o.shape = bernoulli(rng, 0.5) ? ShapeKind::rect : ShapeKind::circle;
        o.size = std::round(uniform(rng, p.min_size, p.max_size));
        o.color = kPalette[static_cast<std::size_t>(colors[static_cast<std::size_t>(k)])].rgb;
        o.depth = 1.0 + k + uniform(rng, 0.0, 0.5);
        o.seg_id = static_cast<std::uint32_t>(250 - 60 * k);
        const double m = o.size / 2.0 + 1.0;
        auto point = [&] { return std::array<double, 2>{uniform(rng, m, W - 1 - m), uniform(rng, m, H - 1 - m)}; };
        const double pick = uniform01(rng);
        const int last = p.frame_count - 1;
        if (pick < 0.7) {
            o.path.kind = PathKind::linear;
            std::array<double, 2> a{}, b{};
            do {
                a = point();
                b = point();
            } while (std::hypot(b[0] - a[0], b[1] - a[1]) < p.min_travel);
            o.path.start = a;
            o.path.velocity = {(b[0] - a[0]) / last, (b[1] - a[1]) / last};
        } else if (pick < 0.85) {
            o.path.kind = PathKind::circular;
            o.path.radius = std::round(uniform(rng, 5.0, std::min(10.0, H / 2 - m - 1)));
            o.path.center = {uniform(rng, m + o.path.radius, W - 1 - m - o.path.radius),
                             uniform(rng, m + o.path.radius, H - 1 - m - o.path.radius)};
            o.path.omega = (bernoulli(rng, 0.5) ? 1.0 : -1.0) * uniform(rng, 0.15, 0.35);
            o.path.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        } else {
            o.path.kind = PathKind::keyframed;
            for (int f : {0, last / 2, last}) {
                const auto c = point();
                o.path.keys.push_back({f, c[0], c[1]});
            }
        }
        o.appear_frame = bernoulli(rng, p.late_probability) ? uniform_int(rng, 1, p.frame_count / 2) : 0;
        s.objects.push_back(o);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Scene spec text format
//   flextraj-scene 1
//   size <H> <W>
//   frames <T>
//   background <r> <g> <b>
//   seed <n>
//   points_per_side <n>
//   object <rect|circle> <size> <r> <g> <b> <depth> <appear> <seg> linear <x0> <y0> <vx> <vy>
//   object ... circular <cx> <cy> <radius> <omega> <phase>
//   object ... keyframed <k> (<frame> <x> <y>){k}

inline constexpr int kSceneFormatVersion = 1;

inline std::string scene_spec_to_string(const SceneSpec& s) {
    using detail::format_double;
    std::ostringstream out;
    out << "flextraj-scene " << kSceneFormatVersion << "\n";
    out << "size " << s.frame_size.height << ' ' << s.frame_size.width << "\n";
    out << "frames " << s.frame_count << "\n";
    out << "background " << int(s.background.r) << ' ' << int(s.background.g) << ' ' << int(s.background.b) << "\n";
    out << "seed " << s.seed << "\n";
    out << "points_per_side " << s.points_per_side << "\n";
    for (const auto& o : s.objects) {
        out << "object " << to_string(o.shape) << ' ' << format_double(o.size) << ' ' << int(o.color.r) << ' '
            << int(o.color.g) << ' ' << int(o.color.b) << ' ' << format_double(o.depth) << ' ' << o.appear_frame << ' '
            << o.seg_id << ' ';
        const auto& p = o.path;
        switch (p.kind) {
            case PathKind::linear:
                out << "linear " << format_double(p.start[0]) << ' ' << format_double(p.start[1]) << ' '
                    << format_double(p.velocity[0]) << ' ' << format_double(p.velocity[1]);
                break;
            case PathKind::circular:
                out << "circular " << format_double(p.center[0]) << ' ' << format_double(p.center[1]) << ' '
                    << format_double(p.radius) << ' ' << format_double(p.omega) << ' ' << format_double(p.phase);
                break;
            case PathKind::keyframed:
                out << "keyframed " << p.keys.size();
                for (const auto& k : p.keys) out << ' ' << k.frame << ' ' << format_double(k.x) << ' ' << format_double(k.y);
                break;
        }
        out << "\n";
    }
    return out.str();
}

inline SceneSpec scene_spec_from_string(const std::string& text) {
    using detail::parse_double;
    using detail::parse_int;
    std::istringstream in(text);
    std::string line;
    if (!detail::next_line(in, line)) throw Error(ErrorKind::parse, "empty scene spec");
    auto head = detail::split_ws(line);
    if (head.size() != 2 || head[0] != "flextraj-scene") throw Error(ErrorKind::parse, "missing scene spec header");
    if (parse_int(head[1], "scene version") != kSceneFormatVersion) throw Error(ErrorKind::parse, "unsupported scene version");
    SceneSpec s;
    auto byte = [](const std::string& w) {
        const auto v = parse_int(w, "color component");
        if (v < 0 || v > 255) throw Error(ErrorKind::parse, "color component out of range: " + w);
        return static_cast<std::uint8_t>(v);
    };
    auto need = [](const std::vector<std::string>& w, std::size_t n) {
        if (w.size() < n) throw Error(ErrorKind::parse, "scene spec line too short: '" + w.front() + "'");
    };
    while (detail::next_line(in, line)) {
        auto w = detail::split_ws(line);
        const auto& key = w[0];
        if (key == "size") {
            need(w, 3);
            s.frame_size = {static_cast<int>(parse_int(w[1], "height")), static_cast<int>(parse_int(w[2], "width"))};
        } else if (key == "frames") {
            need(w, 2);
            s.frame_count = static_cast<int>(parse_int(w[1], "frames"));
        } else if (key == "background") {
            need(w, 4);
            s.background = {byte(w[1]), byte(w[2]), byte(w[3])};
        } else if (key == "seed") {
            need(w, 2);
            s.seed = static_cast<std::uint64_t>(parse_int(w[1], "seed"));
        } else if (key == "points_per_side") {
            need(w, 2);
            s.points_per_side = static_cast<int>(parse_int(w[1], "points_per_side"));
        } else if (key == "object") {
            need(w, 10);
            SceneObject o;
            if (w[1] == "rect") o.shape = ShapeKind::rect;
            else if (w[1] == "circle") o.shape = ShapeKind::circle;
            else throw Error(ErrorKind::parse, "unknown shape '" + w[1] + "'");
            o.size = parse_double(w[2], "size");
            o.color = {byte(w[3]), byte(w[4]), byte(w[5])};
            o.depth = parse_double(w[6], "depth");
            o.appear_frame = static_cast<int>(parse_int(w[7], "appear"));
            o.seg_id = static_cast<std::uint32_t>(parse_int(w[8], "seg"));
            const auto& kind = w[9];
            if (kind == "linear") {
                need(w, 14);
                o.path.kind = PathKind::linear;
                o.path.start = {parse_double(w[10], "x0"), parse_double(w[11], "y0")};
                o.path.velocity = {parse_double(w[12], "vx"), parse_double(w[13], "vy")};
            } else if (kind == "circular") {
                need(w, 15);
                o.path.kind = PathKind::circular;
                o.path.center = {parse_double(w[10], "cx"), parse_double(w[11], "cy")};
                o.path.radius = parse_double(w[12], "radius");
                o.path.omega = parse_double(w[13], "omega");
                o.path.phase = parse_double(w[14], "phase");
            } else if (kind == "keyframed") {
                need(w, 11);
                o.path.kind = PathKind::keyframed;
                const auto k = parse_int(w[10], "keyframe count");
                if (k < 1 || w.size() != static_cast<std::size_t>(11 + 3 * k)) {
                    throw Error(ErrorKind::parse, "keyframe count does not match the values given");
                }
                for (long long i = 0; i < k; ++i) {
                    const auto b = static_cast<std::size_t>(11 + 3 * i);
                    o.path.keys.push_back({static_cast<int>(parse_int(w[b], "frame")), parse_double(w[b + 1], "x"),
                                           parse_double(w[b + 2], "y")});
                }
            } else {
                throw Error(ErrorKind::parse, "unknown path kind '" + kind + "'");
            }
            s.objects.push_back(o);
        } else {
            throw Error(ErrorKind::parse, "unknown scene spec key '" + key + "'");
        }
    }
    validate(s);
    return s;
}

inline SceneSpec load_scene_spec(const std::filesystem::path& path) {
    auto in = open_input(path, false);
    std::stringstream ss;
    ss << in.rdbuf();
    return scene_spec_from_string(ss.str());
}

/// How the input frame departs from the condition: a pixel offset applied to
/// every object and/or a rect <-> circle swap.
struct UnalignedEdit {
    double dx = 0.0;
    double dy = 0.0;
    bool swap_shape = false;
};

struct UnalignedPair {
    Video8 first_frame;                          // the edited scene's frame 0
    Video8 target;                               // the edited scene, all frames
    TrajectorySet condition;                     // trajectories of the original scene
    std::vector<ExtractedTrajectory> intended;   // edited object centers
    std::vector<ExtractedTrajectory> condition_centers;
    SceneSpec edited;
};

inline SceneSpec apply_edit(const SceneSpec& spec, const UnalignedEdit& e) {
    SceneSpec out = spec;
    for (auto& o : out.objects) {
        if (e.swap_shape) o.shape = o.shape == ShapeKind::rect ? ShapeKind::circle : ShapeKind::rect;
        auto& p = o.path;
        p.start[0] += e.dx;
        p.start[1] += e.dy;
        p.center[0] += e.dx;
        p.center[1] += e.dy;
        for (auto& k : p.keys) {
            k.x += e.dx;
            k.y += e.dy;
        }
    }
    return out;
}

/// The condition keeps the original motion; the frame shows the edited scene,
/// whose object centers follow the same displacements from their new place.
inline UnalignedPair make_unaligned_pair(const SceneSpec& spec, const UnalignedEdit& edit) {
    UnalignedPair out;
    out.edited = apply_edit(spec, edit);
    out.target = render_scene(out.edited);
    out.first_frame = Video8(1, spec.frame_size.height, spec.frame_size.width);
    std::copy(out.target.frame(0).begin(), out.target.frame(0).end(), out.first_frame.data().begin());
    out.condition = scene_trajectories(spec);
    out.intended = center_paths(out.edited);
    out.condition_centers = center_paths(spec);
    return out;
}

}  // namespace flextraj
