// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "flextraj/dit/checkpoint.hpp"
#include "flextraj/dit/model.hpp"
#include "flextraj/dit/sampler.hpp"
#include "oracles.hpp"

using namespace flextraj;

namespace {

template <typename T>
Mat<T> gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
    return m;
}

ModelConfig small_config(std::uint64_t seed, int width = 8, int layers = 1, int channels = 6) {
    ModelConfig c;
    c.latent_channels = channels;
    c.width = width;
    c.layers = layers;
    c.heads = 2;
    c.lora_rank = 3;
    c.seed = seed;
    c.schedule.steps = 10;
    return c;
}

// Gives every zero-initialized trainable tensor random values so gradients
// and condition paths are exercised.
template <typename T>
void randomize_trainables(ConditionedDiT<T>& m, std::mt19937_64& rng) {
    auto& P = m.params();
    P.fusion = gaussian<T>(P.fusion.rows(), P.fusion.cols(), rng, 0.3);
    for (auto& L : P.layers) {
        L.lora_q_b = gaussian<T>(L.lora_q_b.rows(), L.lora_q_b.cols(), rng, 0.3);
        L.lora_k_b = gaussian<T>(L.lora_k_b.rows(), L.lora_k_b.cols(), rng, 0.3);
        L.lora_v_b = gaussian<T>(L.lora_v_b.rows(), L.lora_v_b.cols(), rng, 0.3);
        L.bq = gaussian<T>(1, L.bq.cols(), rng, 0.1);
        L.ln1_g.array() += gaussian<T>(1, L.ln1_g.cols(), rng, 0.1).array();
    }
    P.cond_embed_b = gaussian<T>(1, P.cond_embed_b.cols(), rng, 0.1);
}

template <typename T>
ModelInput<T> random_input(const ModelConfig& c, const LatentShape& shape, int n_text, bool cond, bool color,
                           std::mt19937_64& rng) {
    ModelInput<T> in;
    in.shape = shape;
    in.x_t = gaussian<T>(shape.tokens(), c.latent_channels, rng);
    in.timestep = static_cast<int>(rng() % static_cast<std::uint64_t>(c.schedule.steps)) + 1;
    in.text = gaussian<T>(n_text, c.width, rng);
    if (cond) {
        in.cond.id = gaussian<T>(shape.tokens(), c.latent_channels, rng);
        if (color) in.cond.color = gaussian<T>(shape.tokens(), c.latent_channels, rng);
    }
    return in;
}

}  // namespace

TEST(Fusion, Examples) {
    Mat<double> z_id(1, 1), z_col(1, 1), w(1, 1);
    z_id << 1.0;
    z_col << 2.0;
    w << 1.0;
    EXPECT_EQ(fuse_conditions(z_id, std::optional<Mat<double>>(z_col), w)(0, 0), 3.0);
    EXPECT_EQ(fuse_conditions(z_id, std::optional<Mat<double>>{}, w), z_id);
    std::mt19937_64 rng(1);
    auto a = gaussian<double>(7, 5, rng), b = gaussian<double>(7, 5, rng);
    EXPECT_EQ(fuse_conditions(a, std::optional<Mat<double>>(b), Mat<double>::Zero(5, 5).eval()), a);
    EXPECT_THROW(fuse_conditions(a, std::optional<Mat<double>>(gaussian<double>(6, 5, rng)), Mat<double>::Zero(5, 5).eval()),
                 Error);
}

TEST(Sequence, OrderAndSharedPositions) {
    Mat<float> noise = Mat<float>::Zero(2, 3), text = Mat<float>::Zero(1, 4), cond = Mat<float>::Ones(2, 3);
    std::vector<TokenPosition> pos{{0, 0, 1}, {0, 1, 0}};
    auto seq = build_sequence<float>(noise, pos, text, cond);
    EXPECT_EQ(seq.segments, (std::vector<Segment>{Segment::noise, Segment::noise, Segment::text, Segment::cond,
                                                  Segment::cond}));
    EXPECT_EQ(seq.positions[3], seq.positions[0]);
    EXPECT_EQ(seq.positions[4], seq.positions[1]);
    EXPECT_EQ(seq.positions[2], (TokenPosition{0, 0, 0}));
    EXPECT_EQ(seq.counts.total(), 5);
    auto plain = build_sequence<float>(noise, pos, text, Mat<float>(0, 3));
    EXPECT_EQ(plain.counts, (SequenceCounts{2, 1, 0}));
    EXPECT_THROW(build_sequence<float>(noise, pos, text, Mat<float>::Ones(3, 3)), Error);
}

TEST(CausalMask, Examples) {
    const double inf = std::numeric_limits<double>::infinity();
    auto m = causal_mask<double>({2, 1, 1});
    ASSERT_EQ(m.rows(), 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_EQ(m(i, j), 0.0);
    EXPECT_EQ(m(3, 0), -inf);
    EXPECT_EQ(m(3, 1), -inf);
    EXPECT_EQ(m(3, 2), -inf);
    EXPECT_EQ(m(3, 3), 0.0);
    EXPECT_TRUE((causal_mask<double>({3, 2, 0}).array() == 0).all());
    EXPECT_TRUE((causal_mask<double>({0, 0, 3}).array() == 0).all());
}

TEST(ProjectQkv, AdapterOnlyOnConditionRows) {
    LayerParams<double> L;
    L.wq = Mat<double>::Zero(2, 2);
    L.bq.resize(1, 2);
    L.bq << 5, 5;
    L.wk = L.wv = Mat<double>::Identity(2, 2);
    L.bk = L.bv = Mat<double>::Zero(1, 2);
    L.lora_q_a.resize(2, 1);
    L.lora_q_a << 1, 0;
    L.lora_q_b.resize(1, 2);
    L.lora_q_b << 0, 1;
    L.lora_k_a = L.lora_v_a = L.lora_q_a;
    L.lora_k_b = L.lora_v_b = Mat<double>::Zero(1, 2);
    Mat<double> x(2, 2);
    x << 1, 0, 1, 0;  // row 0 noise, row 1 cond
    auto [q, k, v] = project_qkv(x, L, 1);
    EXPECT_EQ(q(0, 0), 5);
    EXPECT_EQ(q(0, 1), 5);
    EXPECT_EQ(q(1, 0), 5);
    EXPECT_EQ(q(1, 1), 6);
    EXPECT_EQ(k, x);
    L.lora_q_b.setZero();
    auto [q0, k0, v0] = project_qkv(x, L, 1);
    EXPECT_EQ(q0.row(0), q0.row(1));
}

TEST(Attention, Examples) {
    Mat<double> q = Mat<double>::Zero(2, 1), k = Mat<double>::Zero(2, 1), v(2, 1);
    v << 1, 3;
    auto out = masked_attention<double>(q, k, v, nullptr, 1);
    EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(out(1, 0), 2.0);

    std::mt19937_64 rng(2);
    auto q1 = gaussian<double>(1, 4, rng), k1 = gaussian<double>(1, 4, rng), v1 = gaussian<double>(1, 4, rng);
    EXPECT_LT((masked_attention<double>(q1, k1, v1, nullptr, 2) - v1).cwiseAbs().maxCoeff(), 1e-15);

    auto q3 = gaussian<double>(3, 4, rng), k3 = gaussian<double>(3, 4, rng), v3 = gaussian<double>(3, 4, rng);
    auto mask = causal_mask<double>({2, 0, 1});
    auto o3 = masked_attention<double>(q3, k3, v3, &mask, 2);
    EXPECT_LT((o3.row(2) - v3.row(2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AttentionBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    auto q = gaussian<double>(5, 6, rng), k = gaussian<double>(5, 6, rng), v = gaussian<double>(5, 6, rng);
    auto w = gaussian<double>(5, 6, rng);
    auto mask = causal_mask<double>({2, 1, 2});
    auto loss = [&] { return (masked_attention<double>(q, k, v, &mask, 3).array() * w.array()).sum(); };
    std::vector<Mat<double>> probs;
    masked_attention<double>(q, k, v, &mask, 3, &probs);
    Mat<double> dq, dk, dv;
    masked_attention_backward<double>(q, k, v, probs, w, 3, dq, dk, dv);
    EXPECT_LT((dq - oracle::numeric_gradient(q, loss)).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((dk - oracle::numeric_gradient(k, loss)).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((dv - oracle::numeric_gradient(v, loss)).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Schedule, EndpointsAndMonotone) {
    Mat<double> x0(2, 2), eps(2, 2);
    x0 << 1, 2, 3, 4;
    eps << -1, 0.5, 7, 8;
    EXPECT_EQ(add_noise(x0, eps, 1.0), x0);
    EXPECT_EQ(add_noise(x0, eps, 0.0), eps);
    Mat<double> one = Mat<double>::Ones(1, 1);
    EXPECT_NEAR(add_noise(one, one, 0.5)(0, 0), 1.41421356, 1e-8);
    DiffusionSchedule s;
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    EXPECT_EQ(add_noise(x0, eps, 0, s), x0);
    for (int t = 1; t <= s.steps(); ++t) {
        EXPECT_LE(s.alpha_bar(t), s.alpha_bar(t - 1));
        EXPECT_GT(s.alpha_bar(t), 0.0);
    }
    EXPECT_LT(s.alpha_bar(s.steps()), 1e-3);
    EXPECT_THROW(s.alpha_bar(51), Error);
    ScheduleParams literal;
    literal.reference_steps = 0;
    EXPECT_GT(DiffusionSchedule(literal).alpha_bar(50), 0.5);
}

TEST(Schedule, TerminalCorrelationMatchesSignalCoefficient) {
    DiffusionSchedule s;
    std::mt19937_64 rng(4);
    const int n = 200000;
    auto x0 = gaussian<double>(n, 1, rng), eps = gaussian<double>(n, 1, rng);
    for (int t : {10, 25, 50}) {
        auto xt = add_noise(x0, eps, t, s);
        double corr = xt.col(0).dot(x0.col(0)) / (xt.norm() * x0.norm());
        EXPECT_NEAR(corr, std::sqrt(s.alpha_bar(t)), 5e-3);
    }
}

TEST(Loss, Examples) {
    Mat<double> a = Mat<double>::Constant(3, 4, 1.0);
    EXPECT_EQ(diffusion_loss(a, a), 0.0);
    EXPECT_DOUBLE_EQ(diffusion_loss(a, (a.array() + 2.0).matrix().eval()), 4.0);
    std::mt19937_64 rng(5);
    auto x = gaussian<double>(3, 4, rng), y = gaussian<double>(3, 4, rng);
    Mat<double> xr = x.reverse(), yr = y.reverse();
    EXPECT_NEAR(diffusion_loss(x, y), diffusion_loss(xr, yr), 1e-15);
}

TEST(Model, MaskIndependenceLayerwise) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        auto cfg = small_config(trial, 16, 2, 6);
        cfg.dense_mask = trial % 2 == 0;
        ConditionedDiT<double> model(cfg);
        randomize_trainables(model, rng);
        LatentShape shape{2, 2, 3};
        auto in = random_input<double>(cfg, shape, 3, true, true, rng);
        std::vector<Mat<double>> h1, h2;
        model.forward(in, &h1);
        auto in2 = in;
        in2.x_t = gaussian<double>(in.x_t.rows(), in.x_t.cols(), rng, 5.0);
        in2.text = gaussian<double>(in.text.rows(), in.text.cols(), rng, 5.0);
        in2.timestep = 1 + (in.timestep % cfg.schedule.steps);
        model.forward(in2, &h2);
        const int first_cond = shape.tokens() + 3;
        for (std::size_t l = 0; l < h1.size(); ++l) {
            auto diff = (h1[l].bottomRows(shape.tokens()) - h2[l].bottomRows(shape.tokens())).cwiseAbs().maxCoeff();
            EXPECT_LE(diff, 1e-12) << "layer " << l;
            EXPECT_GT((h1[l].topRows(first_cond) - h2[l].topRows(first_cond)).cwiseAbs().maxCoeff(), 1e-3);
        }
    }
}

TEST(Model, BasePreservedAtInitWithoutCondition) {
    auto cfg = small_config(9, 16, 2, 6);
    ConditionedDiT<float> model(cfg);
    std::mt19937_64 rng(7);
    LatentShape shape{2, 2, 2};
    auto in = random_input<float>(cfg, shape, 2, false, false, rng);
    auto out = model.forward(in);

    // The base model alone: same weights, adapters removed entirely.
    auto base_cfg = cfg;
    base_cfg.lora_rank = 0;
    ConditionedDiT<float> base(base_cfg);
    auto& P = base.params();
    const auto& Q = model.params();
    P.embed_w = Q.embed_w;
    P.embed_b = Q.embed_b;
    P.text_w = Q.text_w;
    P.text_b = Q.text_b;
    P.time_w1 = Q.time_w1;
    P.time_b1 = Q.time_b1;
    P.time_w2 = Q.time_w2;
    P.time_b2 = Q.time_b2;
    for (std::size_t l = 0; l < P.layers.size(); ++l) {
        auto keep = P.layers[l];
        P.layers[l] = Q.layers[l];
        P.layers[l].lora_q_a = keep.lora_q_a;
        P.layers[l].lora_q_b = keep.lora_q_b;
        P.layers[l].lora_k_a = keep.lora_k_a;
        P.layers[l].lora_k_b = keep.lora_k_b;
        P.layers[l].lora_v_a = keep.lora_v_a;
        P.layers[l].lora_v_b = keep.lora_v_b;
    }
    P.lnf_g = Q.lnf_g;
    P.lnf_b = Q.lnf_b;
    P.head_w = Q.head_w;
    P.head_b = Q.head_b;
    EXPECT_EQ(base.forward(in), out);
}

TEST(Model, InitialTrainablesAreZero) {
    ConditionedDiT<double> model(small_config(1));
    EXPECT_TRUE((model.params().fusion.array() == 0).all());
    for (const auto& L : model.params().layers) {
        EXPECT_TRUE((L.lora_q_b.array() == 0).all());
        EXPECT_TRUE((L.lora_k_b.array() == 0).all());
        EXPECT_TRUE((L.lora_v_b.array() == 0).all());
    }
    EXPECT_EQ(model.params().cond_embed_w, model.params().embed_w);
}

TEST(Model, ConditionPerturbationChangesPrediction) {
    std::mt19937_64 rng(8);
    auto cfg = small_config(2, 16, 2, 6);
    ConditionedDiT<double> model(cfg);
    randomize_trainables(model, rng);
    LatentShape shape{2, 2, 2};
    auto in = random_input<double>(cfg, shape, 2, true, false, rng);
    auto a = model.forward(in);
    in.cond.id(3, 1) += 1.0;
    EXPECT_GT((model.forward(in) - a).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Model, PositionSharingPermutationEquivariance) {
    std::mt19937_64 rng(10);
    auto cfg = small_config(3, 16, 2, 6);
    ConditionedDiT<double> model(cfg);
    randomize_trainables(model, rng);
    LatentShape shape{2, 2, 3};
    auto in = random_input<double>(cfg, shape, 2, true, true, rng);
    auto out = model.forward(in);
    std::vector<int> perm(static_cast<std::size_t>(shape.tokens()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto grid = grid_positions(shape);
    auto pin = in;
    pin.positions.clear();
    for (std::size_t i = 0; i < perm.size(); ++i) {
        pin.x_t.row(static_cast<Eigen::Index>(i)) = in.x_t.row(perm[i]);
        pin.cond.id.row(static_cast<Eigen::Index>(i)) = in.cond.id.row(perm[i]);
        pin.cond.color->row(static_cast<Eigen::Index>(i)) = in.cond.color->row(perm[i]);
        pin.positions.push_back(grid[static_cast<std::size_t>(perm[i])]);
    }
    auto pout = model.forward(pin);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        EXPECT_LT((pout.row(static_cast<Eigen::Index>(i)) - out.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Model, KvCacheMatchesFullForward) {
    std::mt19937_64 rng(11);
    auto cfg = small_config(4, 16, 2, 6);
    ConditionedDiT<double> model(cfg);
    randomize_trainables(model, rng);
    LatentShape shape{2, 2, 2};
    auto in = random_input<double>(cfg, shape, 3, true, true, rng);
    auto cache = model.precompute_kv_cache(in.cond, shape);
    ASSERT_EQ(cache.keys.size(), 2u);
    for (int t = 1; t <= cfg.schedule.steps; ++t) {
        in.timestep = t;
        typename ConditionedDiT<double>::Tape tape;
        auto full = model.forward_train(in, tape);
        for (std::size_t l = 0; l < 2; ++l) {
            EXPECT_LE((tape.layers[l].k.bottomRows(shape.tokens()) - cache.keys[l]).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LE((tape.layers[l].v.bottomRows(shape.tokens()) - cache.values[l]).cwiseAbs().maxCoeff(), 1e-12);
        }
        EXPECT_LE((model.forward_with_cache(in, cache) - full).cwiseAbs().maxCoeff(), 1e-12);
    }
    ConditionInput<double> none;
    EXPECT_TRUE(model.precompute_kv_cache(none, shape).empty());
    in.cond = {};
    EXPECT_EQ(model.forward_with_cache(in, model.precompute_kv_cache(none, shape)), model.forward(in));
}

TEST(Model, DenseMaskAndBlockedAttentionAgree) {
    std::mt19937_64 rng(17);
    auto cfg = small_config(5, 16, 2, 6);
    ConditionedDiT<double> blocked(cfg);
    randomize_trainables(blocked, rng);
    cfg.dense_mask = true;
    ConditionedDiT<double> dense(cfg);
    dense.params() = blocked.params();
    LatentShape shape{2, 3, 2};
    auto in = random_input<double>(cfg, shape, 3, true, true, rng);
    std::vector<Mat<double>> h1, h2;
    auto a = blocked.forward(in, &h1);
    auto b = dense.forward(in, &h2);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
    for (std::size_t l = 0; l < h1.size(); ++l) EXPECT_LE((h1[l] - h2[l]).cwiseAbs().maxCoeff(), 1e-12);
}

class GradientCheck : public ::testing::TestWithParam<bool> {};

INSTANTIATE_TEST_SUITE_P(MaskModes, GradientCheck, ::testing::Values(false, true));

TEST_P(GradientCheck, AllParametersMatchFiniteDifferences) {
    std::mt19937_64 rng(12);
    auto cfg = small_config(5, 8, 1, 6);
    cfg.dense_mask = GetParam();
    ConditionedDiT<double> model(cfg);
    randomize_trainables(model, rng);
    LatentShape shape{2, 2, 2};
    auto in = random_input<double>(cfg, shape, 2, true, true, rng);
    auto eps = gaussian<double>(shape.tokens(), cfg.latent_channels, rng);
    auto loss = [&] { return diffusion_loss(eps, model.forward(in)); };

    typename ConditionedDiT<double>::Tape tape;
    auto pred = model.forward_train(in, tape);
    Mat<double> d_out = 2.0 * (pred - eps) / static_cast<double>(eps.size());
    auto grads = model.params().zeros_like();
    model.backward(tape, d_out, grads);

    std::map<std::string, Mat<double>*> g;
    grads.visit([&](const std::string& name, Mat<double>& m, ParamGroup) { g[name] = &m; });
    model.params().visit([&](const std::string& name, Mat<double>& m, ParamGroup) {
        auto num = oracle::numeric_gradient(m, loss);
        const double scale = std::max(num.cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_LE((num - *g[name]).cwiseAbs().maxCoeff() / scale, 1e-4) << name;
    });
}

TEST(Model, SkippedGroupsLeaveGradientsUntouched) {
    std::mt19937_64 rng(13);
    auto cfg = small_config(6, 8, 2, 6);
    ConditionedDiT<double> model(cfg);
    randomize_trainables(model, rng);
    LatentShape shape{2, 2, 2};
    auto in = random_input<double>(cfg, shape, 2, true, true, rng);
    typename ConditionedDiT<double>::Tape tape;
    auto pred = model.forward_train(in, tape);
    auto grads = model.params().zeros_like();
    model.backward(tape, pred, grads, {false, true, true, true});
    grads.visit([](const std::string& name, Mat<double>& m, ParamGroup group) {
        if (group == ParamGroup::base) {
            EXPECT_TRUE((m.array() == 0).all()) << name;
        } else if (name.rfind("layer1.lora.q", 0) == 0) {
            // Last-layer condition queries only shape condition states nobody reads.
            EXPECT_TRUE((m.array() == 0).all()) << name;
        } else {
            EXPECT_GT(m.cwiseAbs().maxCoeff(), 0.0) << name;
        }
    });
}

TEST(Sampler, OneStepWithOracleDenoiserRecoversCleanLatent) {
    DiffusionSchedule s(ScheduleParams{10, 1e-4, 0.02, 0});
    std::mt19937_64 rng(14);
    auto x0 = gaussian<double>(6, 3, rng);
    // Linear toy: the oracle knows x0, so eps = (x_t - sqrt(a) x0) / sqrt(1 - a).
    const int T = s.steps();
    Denoiser<double> oracle_eps = [&](const Mat<double>& x, int t) {
        const double a = s.alpha_bar(t);
        return ((x - std::sqrt(a) * x0) / std::sqrt(1.0 - a)).eval();
    };
    SamplerOptions opt;
    opt.steps = 1;
    opt.seed = 3;
    auto out = ddim_sample<double>(oracle_eps, s, Mat<double>(0, 3), 6, opt);
    EXPECT_LT((out - x0).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(sampling_timesteps(T, 1), (std::vector<int>{T}));
    EXPECT_EQ(sampling_timesteps(50, 50).size(), 50u);
    EXPECT_EQ(sampling_timesteps(50, 5), (std::vector<int>{50, 40, 30, 20, 10}));
}

TEST(Sampler, DeterministicAnchoredAndCacheEquivalent) {
    std::mt19937_64 rng(15);
    auto cfg = small_config(7, 16, 2, 6);
    ConditionedDiT<float> model(cfg);
    randomize_trainables(model, rng);
    LatentShape shape{3, 2, 2};
    auto first = gaussian<float>(4, cfg.latent_channels, rng);
    auto text = gaussian<float>(2, cfg.width, rng);
    ConditionInput<float> cond{gaussian<float>(shape.tokens(), cfg.latent_channels, rng), std::nullopt};
    SamplerOptions opt;
    opt.steps = 10;
    opt.seed = 99;
    auto a = sample(model, shape, first, text, cond, opt);
    auto b = sample(model, shape, first, text, cond, opt);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.topRows(4), first);
    opt.use_kv_cache = false;
    auto c = sample(model, shape, first, text, cond, opt);
    EXPECT_LE((a - c).cwiseAbs().maxCoeff(), 1e-5f);
    opt.eta = 1.0;
    EXPECT_EQ(sample(model, shape, first, text, cond, opt), sample(model, shape, first, text, cond, opt));
}

TEST(Checkpoint, ExactRoundTrip) {
    std::mt19937_64 rng(16);
    auto cfg = small_config(8, 16, 2, 6);
    ConditionedDiT<float> model(cfg);
    randomize_trainables(model, rng);
    Checkpoint<float> ck{cfg, model.params(), {{"adam.m.fusion.w", gaussian<float>(6, 6, rng)}},
                         {{"step", 12}, {"note", "x"}}};
    std::stringstream ss;
    write_checkpoint(ss, ck);
    const std::string bytes = ss.str();
    std::stringstream in(bytes);
    auto back = read_checkpoint<float>(in);
    EXPECT_EQ(back.config, cfg);
    EXPECT_EQ(back.meta, ck.meta);
    EXPECT_EQ(back.extra.at("adam.m.fusion.w"), ck.extra.at("adam.m.fusion.w"));
    auto restored = model_from_checkpoint(back);
    LatentShape shape{2, 2, 2};
    auto inp = random_input<float>(cfg, shape, 2, true, true, rng);
    EXPECT_EQ(restored.forward(inp), model.forward(inp));
    std::stringstream again;
    write_checkpoint(again, back);
    EXPECT_EQ(again.str(), bytes);

    std::stringstream wrong(bytes);
    EXPECT_THROW(read_checkpoint<double>(wrong), Error);
    std::stringstream truncated(bytes.substr(0, bytes.size() - 10));
    EXPECT_THROW(read_checkpoint<float>(truncated), Error);
}
