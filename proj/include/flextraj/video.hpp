// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "flextraj/error.hpp"

namespace flextraj {

struct Rgb8 {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    auto operator<=>(const Rgb8&) const = default;
};

struct FrameSize {
    int height = 0;
    int width = 0;

    bool operator==(const FrameSize&) const = default;
};

/// Dense T x H x W x 3 video, channel-last. `Video<std::uint8_t>` holds 8-bit
/// frames; floating-point videos are normalized to [-1, 1].
template <typename T>
class Video {
   public:
    Video() = default;
    Video(int frames, int height, int width, T fill = T{})
        : frames_(frames), height_(height), width_(width),
          data_(static_cast<std::size_t>(frames) * height * width * 3, fill) {
        if (frames < 0 || height < 0 || width < 0) {
            throw Error(ErrorKind::shape, "video dimensions must be nonnegative");
        }
    }

    int frames() const { return frames_; }
    int height() const { return height_; }
    int width() const { return width_; }
    FrameSize frame_size() const { return {height_, width_}; }
    std::size_t frame_stride() const { return static_cast<std::size_t>(height_) * width_ * 3; }

    std::size_t index(int t, int y, int x) const {
        return ((static_cast<std::size_t>(t) * height_ + y) * width_ + x) * 3;
    }

    T& at(int t, int y, int x, int c) { return data_[index(t, y, x) + c]; }
    const T& at(int t, int y, int x, int c) const { return data_[index(t, y, x) + c]; }

    std::span<T> frame(int t) { return {data_.data() + t * frame_stride(), frame_stride()}; }
    std::span<const T> frame(int t) const { return {data_.data() + t * frame_stride(), frame_stride()}; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Video&) const = default;

   private:
    int frames_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using Video8 = Video<std::uint8_t>;

inline void set_pixel(Video8& video, int t, int y, int x, Rgb8 c) {
    auto i = video.index(t, y, x);
    video.data()[i] = c.r;
    video.data()[i + 1] = c.g;
    video.data()[i + 2] = c.b;
}

inline Rgb8 get_pixel(const Video8& video, int t, int y, int x) {
    auto i = video.index(t, y, x);
    return {video.data()[i], video.data()[i + 1], video.data()[i + 2]};
}

inline std::uint8_t unit_to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0));
}

template <typename T>
Video<T> normalize_video(const Video8& video) {
    Video<T> out(video.frames(), video.height(), video.width());
    std::transform(video.data().begin(), video.data().end(), out.data().begin(),
                   [](std::uint8_t v) { return static_cast<T>(v) / T(127.5) - T(1); });
    return out;
}

template <typename T>
Video8 quantize_video(const Video<T>& video) {
    Video8 out(video.frames(), video.height(), video.width());
    std::transform(video.data().begin(), video.data().end(), out.data().begin(), [](T v) {
        double unit = (static_cast<double>(v) + 1.0) * 0.5;
        return unit_to_byte(unit);
    });
    return out;
}

/// Binary PPM with the header on a single line ("P6 W H 255\n").
inline void write_ppm(const std::string& path, const Video8& video, int t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path + " for writing");
    out << "P6 " << video.width() << ' ' << video.height() << " 255\n";
    auto f = video.frame(t);
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size()));
    if (!out) throw Error(ErrorKind::io, "write failed: " + path);
}

inline Video8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
        throw Error(ErrorKind::parse, "unsupported image header in " + path);
    }
    in.get();
    Video8 img(1, h, w);
    in.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.data().size()));
    if (!in) throw Error(ErrorKind::parse, "truncated image data in " + path);
    return img;
}

}  // namespace flextraj
