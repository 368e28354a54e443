// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "flextraj/rng.hpp"
#include "flextraj/tensor.hpp"
#include "flextraj/video.hpp"

namespace flextraj {

struct CodecParams {
    int temporal_factor = 4;
    int spatial_factor = 8;
    int channels = 48;
    std::uint64_t seed = 0x5eed;

    bool operator==(const CodecParams&) const = default;
};

struct LatentShape {
    int frames = 0;
    int height = 0;
    int width = 0;

    int tokens() const { return frames * height * width; }
    bool operator==(const LatentShape&) const = default;
};

/// Token grid T_l x H_l x W_l x C stored as (T_l * H_l * W_l) rows of C channels,
/// rows ordered frame-major then row then column.
template <typename T>
struct LatentGrid {
    Mat<T> tokens;
    LatentShape shape;
    int temporal_factor = 0;
    int spatial_factor = 0;
    std::array<int, 3> source_shape{0, 0, 0};  // (T, H, W)

    int channels() const { return static_cast<int>(tokens.cols()); }
    int token_index(int t, int h, int w) const { return (t * shape.height + h) * shape.width + w; }
};

/// Cell layout used for one patch extent: cells of cell_t frames x cell_s x cell_s pixels.
struct CellLayout {
    int extent = 1;  // patch frames
    int cell_t = 1;
    int cell_s = 1;
};

inline LatentShape latent_shape_for(int frames, int height, int width, const CodecParams& p) {
    const int ft = p.temporal_factor, fs = p.spatial_factor;
    if (frames < 1 || (frames - 1) % ft != 0 || height % fs != 0 || width % fs != 0) {
        throw Error(ErrorKind::shape, "video " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                                          std::to_string(width) + " incompatible with codec: need T = 1 (mod " +
                                          std::to_string(ft) + ") and H, W divisible by " + std::to_string(fs));
    }
    return {(frames - 1) / ft + 1, height / fs, width / fs};
}

/// Deterministic linear stand-in for a pretrained video VAE. Each patch of
/// f_t x f_s x f_s pixels (frame 0 is patched alone) is reduced to per-cell mean
/// colors, then mixed by a seeded orthogonal C x C matrix. The reduction is a
/// fixed linear map with a closed-form least-squares inverse (cell broadcast),
/// so decode is the pseudo-inverse of encode.
template <typename T>
class LatentCodec {
   public:
    explicit LatentCodec(const CodecParams& params) : params_(params) {
        if (params.temporal_factor < 1 || params.spatial_factor < 1 || params.channels < 3) {
            throw Error(ErrorKind::invalid_argument, "codec factors must be >= 1 and channels >= 3");
        }
        first_ = choose_layout(1);
        rest_ = choose_layout(params.temporal_factor);
        Rng rng(derive_seed(params.seed, "latent_codec"));
        std::normal_distribution<double> normal(0.0, 1.0);
        Mat<double> g(params.channels, params.channels);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
        Eigen::HouseholderQR<Mat<double>> qr(g);
        Mat<double> q = qr.householderQ();
        Mat<double> r = qr.matrixQR().template triangularView<Eigen::Upper>();
        for (int j = 0; j < params.channels; ++j) {
            if (r(j, j) < 0) q.col(j) = -q.col(j);
        }
        mix_ = q.template cast<T>();
    }

    const CodecParams& params() const { return params_; }
    const Mat<T>& mixing() const { return mix_; }
    CellLayout layout(int latent_frame) const { return latent_frame == 0 ? first_ : rest_; }

    LatentGrid<T> encode(const Video<T>& video) const {
        const auto shape = latent_shape_for(video.frames(), video.height(), video.width(), params_);
        LatentGrid<T> grid;
        grid.shape = shape;
        grid.temporal_factor = params_.temporal_factor;
        grid.spatial_factor = params_.spatial_factor;
        grid.source_shape = {video.frames(), video.height(), video.width()};
        grid.tokens.resize(shape.tokens(), params_.channels);
        RowVec<T> feat(params_.channels);
        for (int tl = 0; tl < shape.frames; ++tl) {
            for (int hl = 0; hl < shape.height; ++hl) {
                for (int wl = 0; wl < shape.width; ++wl) {
                    cell_means(video, tl, hl, wl, feat);
                    grid.tokens.row(grid.token_index(tl, hl, wl)).noalias() = feat * mix_.transpose();
                }
            }
        }
        return grid;
    }

    /// Projects tokens onto the decodable range: every cell mean is clamped to
    /// [-1, 1], the range of normalized pixels. Rows are tokens, any count.
    void clamp_to_pixel_range(Mat<T>& tokens) const {
        if (tokens.cols() != params_.channels) throw Error(ErrorKind::shape, "token width differs from codec channels");
        Mat<T> feat = tokens * mix_;
        feat = feat.cwiseMax(T(-1)).cwiseMin(T(1));
        tokens.noalias() = feat * mix_.transpose();
    }

    Video<T> decode(const LatentGrid<T>& grid) const {
        if (grid.channels() != params_.channels || grid.temporal_factor != params_.temporal_factor ||
            grid.spatial_factor != params_.spatial_factor) {
            throw Error(ErrorKind::invalid_argument, "latent grid was not produced with these codec parameters");
        }
        const auto& s = grid.shape;
        const int fs = params_.spatial_factor;
        Video<T> video((s.frames - 1) * params_.temporal_factor + 1, s.height * fs, s.width * fs);
        RowVec<T> feat(params_.channels);
        for (int tl = 0; tl < s.frames; ++tl) {
            for (int hl = 0; hl < s.height; ++hl) {
                for (int wl = 0; wl < s.width; ++wl) {
                    feat.noalias() = grid.tokens.row(grid.token_index(tl, hl, wl)) * mix_;
                    broadcast_cells(feat, tl, hl, wl, video);
                }
            }
        }
        return video;
    }

   private:
    CellLayout choose_layout(int extent) const {
        const int fs = params_.spatial_factor;
        for (int ct = 1; ct <= extent; ++ct) {
            if (extent % ct) continue;
            for (int cs = 1; cs <= fs; ++cs) {
                if (fs % cs) continue;
                const int cells = (extent / ct) * (fs / cs) * (fs / cs);
                if (cells * 3 == params_.channels) return {extent, ct, cs};
            }
        }
        throw Error(ErrorKind::invalid_argument,
                    "channels=" + std::to_string(params_.channels) + " admits no cell layout for a patch of " +
                        std::to_string(extent) + "x" + std::to_string(fs) + "x" + std::to_string(fs));
    }

    int first_frame(int tl) const { return tl == 0 ? 0 : 1 + (tl - 1) * params_.temporal_factor; }

    void cell_means(const Video<T>& video, int tl, int hl, int wl, RowVec<T>& feat) const {
        const CellLayout L = layout(tl);
        const int fs = params_.spatial_factor;
        const int per_axis = fs / L.cell_s;
        const T inv = T(1) / static_cast<T>(L.cell_t * L.cell_s * L.cell_s);
        const int t0 = first_frame(tl);
        int k = 0;
        for (int ct = 0; ct < L.extent / L.cell_t; ++ct) {
            for (int cy = 0; cy < per_axis; ++cy) {
                for (int cx = 0; cx < per_axis; ++cx) {
                    T sum[3] = {T(0), T(0), T(0)};
                    for (int dt = 0; dt < L.cell_t; ++dt) {
                        for (int dy = 0; dy < L.cell_s; ++dy) {
                            for (int dx = 0; dx < L.cell_s; ++dx) {
                                const int t = t0 + ct * L.cell_t + dt;
                                const int y = hl * fs + cy * L.cell_s + dy;
                                const int x = wl * fs + cx * L.cell_s + dx;
                                const T* px = &video.at(t, y, x, 0);
                                sum[0] += px[0];
                                sum[1] += px[1];
                                sum[2] += px[2];
                            }
                        }
                    }
                    feat[k++] = sum[0] * inv;
                    feat[k++] = sum[1] * inv;
                    feat[k++] = sum[2] * inv;
                }
            }
        }
    }

    void broadcast_cells(const RowVec<T>& feat, int tl, int hl, int wl, Video<T>& video) const {
        const CellLayout L = layout(tl);
        const int fs = params_.spatial_factor;
        const int per_axis = fs / L.cell_s;
        const int t0 = first_frame(tl);
        int k = 0;
        for (int ct = 0; ct < L.extent / L.cell_t; ++ct) {
            for (int cy = 0; cy < per_axis; ++cy) {
                for (int cx = 0; cx < per_axis; ++cx) {
                    for (int dt = 0; dt < L.cell_t; ++dt) {
                        for (int dy = 0; dy < L.cell_s; ++dy) {
                            for (int dx = 0; dx < L.cell_s; ++dx) {
                                const int t = t0 + ct * L.cell_t + dt;
                                const int y = hl * fs + cy * L.cell_s + dy;
                                const int x = wl * fs + cx * L.cell_s + dx;
                                T* px = &video.at(t, y, x, 0);
                                px[0] = feat[k];
                                px[1] = feat[k + 1];
                                px[2] = feat[k + 2];
                            }
                        }
                    }
                    k += 3;
                }
            }
        }
    }

    CodecParams params_;
    CellLayout first_;
    CellLayout rest_;
    Mat<T> mix_;
};

// Flat binary grid file: magic, version, dtype size, shape header, row-major data.
inline constexpr char kGridMagic[4] = {'F', 'T', 'L', 'G'};

template <typename T>
void write_grid(std::ostream& out, const LatentGrid<T>& g) {
    using detail::write_pod;
    out.write(kGridMagic, 4);
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint32_t>(out, sizeof(T));
    for (int v : {g.shape.frames, g.shape.height, g.shape.width, g.channels(), g.temporal_factor, g.spatial_factor,
                  g.source_shape[0], g.source_shape[1], g.source_shape[2]}) {
        write_pod<std::int32_t>(out, v);
    }
    out.write(reinterpret_cast<const char*>(g.tokens.data()), static_cast<std::streamsize>(g.tokens.size() * sizeof(T)));
}

template <typename T>
LatentGrid<T> read_grid(std::istream& in) {
    using detail::read_pod;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kGridMagic, 4) != 0) throw Error(ErrorKind::parse, "not a latent grid file");
    if (read_pod<std::uint32_t>(in) != 1) throw Error(ErrorKind::parse, "unsupported grid version");
    if (read_pod<std::uint32_t>(in) != sizeof(T)) throw Error(ErrorKind::parse, "grid scalar type mismatch");
    std::array<int, 9> h{};
    for (auto& v : h) v = read_pod<std::int32_t>(in);
    LatentGrid<T> g;
    g.shape = {h[0], h[1], h[2]};
    g.temporal_factor = h[4];
    g.spatial_factor = h[5];
    g.source_shape = {h[6], h[7], h[8]};
    if (g.shape.tokens() < 0 || h[3] < 0) throw Error(ErrorKind::parse, "negative grid dimensions");
    g.tokens.resize(g.shape.tokens(), h[3]);
    in.read(reinterpret_cast<char*>(g.tokens.data()), static_cast<std::streamsize>(g.tokens.size() * sizeof(T)));
    if (!in) throw Error(ErrorKind::parse, "truncated grid data");
    return g;
}

}  // namespace flextraj
