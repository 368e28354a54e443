// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <set>

#include "flextraj/trajectory.hpp"
#include "oracles.hpp"

using namespace flextraj;

namespace {

Trajectory make_track(std::uint32_t track, std::uint32_t seg, int frames) {
    Trajectory tr{track, seg, std::nullopt, {}};
    for (int t = 0; t < frames; ++t) tr.samples.push_back({{1.0 + t, 2.0, 1.0}, true});
    return tr;
}

}  // namespace

TEST(ValidateSet, EmptySetIsValid) {
    TrajectorySet set{{}, 17, {48, 64}};
    EXPECT_TRUE(validate_set(set).empty());
}

TEST(ValidateSet, DuplicateTrackId) {
    TrajectorySet set{{make_track(7, 0, 3), make_track(7, 1, 3)}, 3, {8, 8}};
    auto v = validate_set(set);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].rule, "duplicate track_id");
    EXPECT_EQ(v[0].trajectory, 1u);
}

TEST(ValidateSet, LengthMismatch) {
    TrajectorySet set{{make_track(1, 0, 16)}, 17, {8, 8}};
    auto v = validate_set(set);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].rule, "length mismatch");
}

TEST(ValidateSet, OtherRules) {
    auto tr = make_track(1, 0, 2);
    tr.samples[1].position.z = 0.0;
    tr.color = Color{0.5, 1.5, 0.0};
    TrajectorySet set{{tr, make_track(70000, 300, 2)}, 2, {0, 8}};
    std::set<std::string> rules;
    for (const auto& v : validate_set(set)) rules.insert(v.rule);
    EXPECT_TRUE(rules.count("nonpositive depth"));
    EXPECT_TRUE(rules.count("color out of range"));
    EXPECT_TRUE(rules.count("id out of range"));
    EXPECT_TRUE(rules.count("frame size"));
}

TEST(ValidateSet, InvisibleSampleMayHaveAnyDepth) {
    auto tr = make_track(1, 0, 2);
    tr.samples[0] = {{0, 0, -5.0}, false};
    TrajectorySet set{{tr}, 2, {8, 8}};
    EXPECT_TRUE(validate_set(set).empty());
}

TEST(ValidateSet, Pure) {
    TrajectorySet set{{make_track(7, 0, 3), make_track(7, 1, 2)}, 3, {8, 8}};
    EXPECT_EQ(validate_set(set), validate_set(set));
}

TEST(ProjectPoint, Examples) {
    CameraIntrinsics k{100, 100, 32, 24};
    EXPECT_EQ(project_point({0, 0, 1}, k), (Vec3{32, 24, 1}));
    EXPECT_DOUBLE_EQ(project_point({1, 0, 2}, k).x, 82.0);
    try {
        project_point({0, 0, -1}, k);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::projection);
    }
}

TEST(ProjectPoint, DepthScaleCovariance) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5, 5), z(0.1, 10), lam(0.01, 100);
    CameraIntrinsics k{120, 90, 31.5, 23.5};
    for (int i = 0; i < 1000; ++i) {
        Vec3 p{u(rng), u(rng), z(rng)};
        double l = lam(rng);
        auto a = project_point(p, k);
        auto b = project_point({p.x * l, p.y * l, p.z * l}, k);
        EXPECT_NEAR(a.x, b.x, 1e-9);
        EXPECT_NEAR(a.y, b.y, 1e-9);
    }
}

TEST(IdEncoding, Examples) {
    EXPECT_EQ(encode_ids_to_rgb(0, 0), (Rgb8{1, 0, 1}));
    EXPECT_EQ(encode_ids_to_rgb(3, 255), (Rgb8{4, 1, 0}));
    EXPECT_FALSE(decode_rgb_to_ids(Rgb8{0, 0, 0}).has_value());
    EXPECT_THROW(encode_ids_to_rgb(255, 0), Error);
    EXPECT_THROW(encode_ids_to_rgb(0, 65535), Error);
    EXPECT_THROW(encode_ids_to_rgb(-1, 0), Error);
}

TEST(IdEncoding, InjectiveAndRoundTrips) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> seg(0, 254), track(0, 65534);
    std::set<std::pair<int, int>> inputs;
    std::set<Rgb8> outputs;
    for (int i = 0; i < 10000; ++i) {
        int s = seg(rng), t = track(rng);
        auto c = encode_ids_to_rgb(s, t);
        EXPECT_NE(c, (Rgb8{0, 0, 0}));
        auto back = decode_rgb_to_ids(c);
        ASSERT_TRUE(back);
        EXPECT_EQ(back->seg_id, static_cast<std::uint32_t>(s));
        EXPECT_EQ(back->track_id, static_cast<std::uint32_t>(t));
        inputs.insert({s, t});
        outputs.insert(c);
    }
    EXPECT_EQ(inputs.size(), outputs.size());
}

TEST(TrajectoryFile, RoundTripIsExact) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        auto set = oracle::random_set(rng, 8, 6, 20, true);
        if (set.trajectories.empty()) continue;
        set.trajectories.front().samples.front().position.x = 0.1 + 0.2;  // awkward binary value
        auto text = trajectories_to_string(set);
        EXPECT_EQ(trajectories_from_string(text), set);
        EXPECT_EQ(trajectories_to_string(trajectories_from_string(text)), text);
    }
}

TEST(TrajectoryFile, RejectsMalformedInput) {
    EXPECT_THROW(trajectories_from_string(""), Error);
    EXPECT_THROW(trajectories_from_string("flextraj-trajectories 2\n0 1 4 4\n"), Error);
    EXPECT_THROW(trajectories_from_string("flextraj-trajectories 1\n1 1 4 4\ntrack 0 seg 0 color none\n"), Error);
    EXPECT_THROW(trajectories_from_string("flextraj-trajectories 1\n1 1 4 4\ntrack 0 seg 0 color none\n0 x 1 1 1\n"),
                 Error);
    try {
        trajectories_from_string("garbage");
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parse);
    }
}

TEST(TrajectoryFile, CommentsAndBlankLines) {
    const std::string text =
        "flextraj-trajectories 1\n# header\n1 2 4 6\n\ntrack 3 seg 1 color 0.5 0.25 1\n0 1 2 1 1\n1 2 2 1.5 0\n";
    auto set = trajectories_from_string(text);
    ASSERT_EQ(set.trajectories.size(), 1u);
    EXPECT_EQ(set.frame_size, (FrameSize{4, 6}));
    EXPECT_EQ(set.trajectories[0].track_id, 3u);
    EXPECT_EQ(set.trajectories[0].color, (Color{0.5, 0.25, 1.0}));
    EXPECT_FALSE(set.trajectories[0].samples[1].visible);
}
