// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "flextraj/latent_codec.hpp"

using namespace flextraj;

namespace {

Video<double> random_video(int T, int H, int W, std::uint64_t seed) {
    Video<double> v(T, H, W);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& x : v.data()) x = u(rng);
    return v;
}

}  // namespace

TEST(LatentCodec, ShapeArithmetic) {
    CodecParams p;
    EXPECT_EQ(latent_shape_for(49, 64, 48, p).frames, 13);
    EXPECT_EQ(latent_shape_for(17, 64, 48, p), (LatentShape{5, 8, 6}));
    EXPECT_EQ(latent_shape_for(1, 8, 8, p).frames, 1);
    try {
        latent_shape_for(16, 64, 48, p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::shape);
        EXPECT_NE(std::string(e.what()).find("divisible by 8"), std::string::npos);
    }
    EXPECT_THROW(latent_shape_for(17, 60, 48, p), Error);
}

TEST(LatentCodec, MixingIsOrthogonal) {
    LatentCodec<double> codec(CodecParams{});
    const auto& R = codec.mixing();
    EXPECT_LT((R * R.transpose() - Mat<double>::Identity(48, 48)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(LatentCodec<double>(CodecParams{4, 8, 16, 1}), Error);
}

TEST(LatentCodec, PseudoInverse) {
    for (auto p : {CodecParams{}, CodecParams{4, 4, 48, 7}}) {
        LatentCodec<double> codec(p);
        auto v = random_video(9, 16, 24, 3);
        auto z = codec.encode(v);
        auto z2 = codec.encode(codec.decode(z));
        EXPECT_LT((z.tokens - z2.tokens).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(z2.shape, z.shape);
    }
    LatentCodec<float> fcodec(CodecParams{});
    Video<float> fv(5, 8, 16);
    for (std::size_t i = 0; i < fv.data().size(); ++i) fv.data()[i] = static_cast<float>(std::sin(0.37 * i));
    auto fz = fcodec.encode(fv);
    EXPECT_LT((fz.tokens - fcodec.encode(fcodec.decode(fz)).tokens).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(LatentCodec, Linearity) {
    LatentCodec<double> codec(CodecParams{});
    auto a = random_video(5, 16, 16, 1), b = random_video(5, 16, 16, 2);
    Video<double> mix(5, 16, 16);
    for (std::size_t i = 0; i < mix.data().size(); ++i) mix.data()[i] = 0.3 * a.data()[i] - 1.7 * b.data()[i];
    Mat<double> expect = 0.3 * codec.encode(a).tokens - 1.7 * codec.encode(b).tokens;
    EXPECT_LT((codec.encode(mix).tokens - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LatentCodec, ZeroGridDecodesToZeroVideo) {
    LatentCodec<double> codec(CodecParams{});
    LatentGrid<double> g{Mat<double>::Zero(2 * 2 * 3, 48), {2, 2, 3}, 4, 8, {5, 16, 24}};
    for (auto x : codec.decode(g).data()) EXPECT_EQ(x, 0.0);
}

TEST(LatentCodec, OneHotTokenTouchesOnePatch) {
    LatentCodec<double> codec(CodecParams{});
    LatentGrid<double> g{Mat<double>::Zero(2 * 2 * 3, 48), {2, 2, 3}, 4, 8, {5, 16, 24}};
    g.tokens(g.token_index(1, 1, 2), 5) = 1.0;
    auto v = codec.decode(g);
    for (int t = 0; t < 5; ++t)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 24; ++x)
                for (int c = 0; c < 3; ++c) {
                    const bool in_patch = t >= 1 && y >= 8 && x >= 16;
                    if (!in_patch) {
                        EXPECT_EQ(v.at(t, y, x, c), 0.0);
                    }
                }
    EXPECT_GT(v.at(1, 8, 16, 0) * v.at(1, 8, 16, 0) + v.at(1, 8, 16, 1) * v.at(1, 8, 16, 1), 0.0);
}

TEST(LatentCodec, LocalityOnePixelOneToken) {
    LatentCodec<double> codec(CodecParams{});
    auto v = random_video(9, 16, 16, 5);
    auto base = codec.encode(v);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        auto w = v;
        int t = static_cast<int>(rng() % 9), y = static_cast<int>(rng() % 16), x = static_cast<int>(rng() % 16);
        w.at(t, y, x, static_cast<int>(rng() % 3)) += 0.5;
        auto z = codec.encode(w);
        int changed = 0;
        for (Eigen::Index r = 0; r < z.tokens.rows(); ++r) changed += (z.tokens.row(r) != base.tokens.row(r));
        EXPECT_EQ(changed, 1);
    }
}

TEST(LatentCodec, DecodeRejectsForeignGrid) {
    LatentCodec<double> codec(CodecParams{});
    LatentGrid<double> g{Mat<double>::Zero(4, 48), {1, 2, 2}, 4, 4, {1, 8, 8}};
    EXPECT_THROW(codec.decode(g), Error);
}

TEST(LatentCodec, GridFileRoundTrip) {
    LatentCodec<float> codec(CodecParams{});
    Video<float> v(5, 8, 16, 0.25f);
    auto g = codec.encode(v);
    std::stringstream ss;
    write_grid(ss, g);
    auto back = read_grid<float>(ss);
    EXPECT_EQ(back.tokens, g.tokens);
    EXPECT_EQ(back.shape, g.shape);
    EXPECT_EQ(back.source_shape, g.source_shape);
    std::stringstream bad("FTLGxx");
    EXPECT_THROW(read_grid<float>(bad), Error);
    std::stringstream wrong_type;
    write_grid(wrong_type, g);
    EXPECT_THROW(read_grid<double>(wrong_type), Error);
}
