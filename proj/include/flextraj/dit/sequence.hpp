// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "flextraj/latent_codec.hpp"
#include "flextraj/tensor.hpp"

namespace flextraj {

enum class Segment : std::uint8_t { noise, text, cond };

/// Video tokens use (frame, row, col); text tokens use (index, 0, 0).
struct TokenPosition {
    int a = 0;
    int b = 0;
    int c = 0;

    bool operator==(const TokenPosition&) const = default;
};

struct SequenceCounts {
    int noise = 0;
    int text = 0;
    int cond = 0;

    int total() const { return noise + text + cond; }
    bool operator==(const SequenceCounts&) const = default;
};

/// Unified input sequence [noise ; text ; cond]. Rows keep their native widths
/// (latent channels for noise/cond, embedding width for text) until the model
/// embeds them.
template <typename T>
struct TokenSequence {
    Mat<T> noise;
    Mat<T> text;
    Mat<T> cond;
    SequenceCounts counts;
    std::vector<Segment> segments;
    std::vector<TokenPosition> positions;
};

inline std::vector<TokenPosition> grid_positions(const LatentShape& shape) {
    std::vector<TokenPosition> out;
    out.reserve(static_cast<std::size_t>(shape.tokens()));
    for (int t = 0; t < shape.frames; ++t)
        for (int h = 0; h < shape.height; ++h)
            for (int w = 0; w < shape.width; ++w) out.push_back({t, h, w});
    return out;
}

template <typename T>
TokenSequence<T> build_sequence(const Mat<T>& noise, const std::vector<TokenPosition>& noise_positions,
                                const Mat<T>& text, const Mat<T>& cond) {
    if (static_cast<std::size_t>(noise.rows()) != noise_positions.size()) {
        throw Error(ErrorKind::shape, "noise tokens and positions disagree");
    }
    if (cond.rows() != 0 && cond.rows() != noise.rows()) {
        throw Error(ErrorKind::shape, "condition token count " + std::to_string(cond.rows()) +
                                          " must equal noise token count " + std::to_string(noise.rows()) + " or be 0");
    }
    TokenSequence<T> seq{noise, text, cond,
                         {static_cast<int>(noise.rows()), static_cast<int>(text.rows()), static_cast<int>(cond.rows())},
                         {}, {}};
    const int n = seq.counts.total();
    seq.segments.reserve(static_cast<std::size_t>(n));
    seq.positions.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < seq.counts.noise; ++i) {
        seq.segments.push_back(Segment::noise);
        seq.positions.push_back(noise_positions[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < seq.counts.text; ++i) {
        seq.segments.push_back(Segment::text);
        seq.positions.push_back({i, 0, 0});
    }
    for (int i = 0; i < seq.counts.cond; ++i) {
        seq.segments.push_back(Segment::cond);
        seq.positions.push_back(noise_positions[static_cast<std::size_t>(i)]);
    }
    return seq;
}

/// Additive attention mask: -inf where a condition row would read a noise or
/// text column, 0 elsewhere. Noise and text rows see every column.
template <typename T>
Mat<T> causal_mask(const SequenceCounts& counts) {
    const int n = counts.total();
    Mat<T> m = Mat<T>::Zero(n, n);
    if (counts.cond > 0) {
        const int first_cond = counts.noise + counts.text;
        m.block(first_cond, 0, counts.cond, first_cond).setConstant(-std::numeric_limits<T>::infinity());
    }
    return m;
}

/// Standard sinusoid: [sin(p w_0), cos(p w_0), sin(p w_1), ...], w_i = 10000^(-2i/dim).
template <typename T>
void sinusoid(double position, int dim, T* out) {
    for (int i = 0; i < dim; ++i) {
        const int pair = i / 2;
        const double freq = std::pow(10000.0, -2.0 * pair / std::max(dim, 2));
        out[i] = static_cast<T>((i % 2 == 0) ? std::sin(position * freq) : std::cos(position * freq));
    }
}

/// Factorized encoding: the width is split into frame / row / col chunks.
template <typename T>
RowVec<T> video_position_encoding(const TokenPosition& p, int width) {
    int axis = (width / 3) & ~1;
    int frame_dims = width - 2 * axis;
    RowVec<T> out(width);
    sinusoid<T>(p.a, frame_dims, out.data());
    sinusoid<T>(p.b, axis, out.data() + frame_dims);
    sinusoid<T>(p.c, axis, out.data() + frame_dims + axis);
    return out;
}

template <typename T>
RowVec<T> text_position_encoding(int index, int width) {
    RowVec<T> out(width);
    sinusoid<T>(index, width, out.data());
    return out;
}

/// Rotary encoding of video positions, applied to query/key rows
/// [row0, row0 + positions.size()). Within each head, channel pairs cycle
/// through the frame, row and col axes; the k-th pair of an axis with n pairs
/// turns by coordinate * 10^(-k / n) radians. Attention logits between two
/// rotated rows then depend on their position offset, so tokens sharing a
/// position line up. `inverse` applies the transpose (for gradients).
template <typename T>
void rotate_positions(Mat<T>& m, Eigen::Index row0, const std::vector<TokenPosition>& positions, int heads,
                      bool inverse = false) {
    if (heads < 1 || m.cols() % heads != 0) throw Error(ErrorKind::shape, "rotary: width must divide by heads");
    if (row0 < 0 || row0 + static_cast<Eigen::Index>(positions.size()) > m.rows()) {
        throw Error(ErrorKind::shape, "rotary: rows out of range");
    }
    const int dh = static_cast<int>(m.cols()) / heads;
    const int pairs = dh / 2;
    std::array<int, 3> per_axis{};
    for (int j = 0; j < pairs; ++j) ++per_axis[static_cast<std::size_t>(j % 3)];
    std::vector<double> freq(static_cast<std::size_t>(pairs));
    for (int j = 0; j < pairs; ++j) {
        freq[static_cast<std::size_t>(j)] = std::pow(10.0, -static_cast<double>(j / 3) / per_axis[static_cast<std::size_t>(j % 3)]);
    }
    const T sign = inverse ? T(-1) : T(1);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto& p = positions[i];
        const std::array<int, 3> coord{p.a, p.b, p.c};
        auto row = m.row(row0 + static_cast<Eigen::Index>(i));
        for (int j = 0; j < pairs; ++j) {
            const double angle = coord[static_cast<std::size_t>(j % 3)] * freq[static_cast<std::size_t>(j)];
            const T c = static_cast<T>(std::cos(angle)), s = sign * static_cast<T>(std::sin(angle));
            for (int h = 0; h < heads; ++h) {
                const int base = h * dh + 2 * j;
                const T x = row(base), y = row(base + 1);
                row(base) = c * x - s * y;
                row(base + 1) = s * x + c * y;
            }
        }
    }
}

}  // namespace flextraj
