// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "flextraj/dit/attention.hpp"
#include "flextraj/dit/schedule.hpp"
#include "flextraj/dit/sequence.hpp"
#include "flextraj/dit/text.hpp"
#include "flextraj/rng.hpp"
#include "flextraj/tensor.hpp"

namespace flextraj {

struct ModelConfig {
    int latent_channels = 48;
    int width = 64;
    int layers = 2;
    int heads = 4;
    int ffn_mult = 4;
    int lora_rank = 8;
    // false: attention is evaluated per mask block (noise/text rows over all
    // keys, condition rows over condition keys), the exact sparsity pattern of
    // causal_mask. true: one dense pass with the additive mask.
    bool dense_mask = false;
    // Typical magnitude of clean latents. When positive, the head output F is
    // read through eps = skip(t) * x_t + scale(t) * F, the noise estimate
    // implied by a unit-variance clean estimate around the Gaussian-optimal
    // one. High-noise eps errors then no longer blow up the clean estimate.
    // 0 uses F as eps directly.
    double data_std = 0.5;
    // Rotate queries and keys of video tokens by their (frame, row, col)
    // position on top of the additive encoding.
    bool rotary = true;
    // Std of a query/key bias shared at initialization. With rotary positions
    // it gives every head a preference for nearby tokens, including the
    // condition token at the same position, much like attention in a
    // pretrained video backbone. 0 leaves both biases zero.
    double local_attention_init = 0.0;
    // Training timesteps are drawn with probability proportional to
    // min(1 / scale(t)^2, cap), which evens out how strongly each noise level
    // trains the clean estimate up to the cap. Noisy levels, where the layout
    // of the clip is decided, otherwise get almost no gradient. 0 (or no
    // output preconditioning) draws t uniformly.
    double timestep_balance_cap = 0.0;
    std::uint64_t seed = 1;
    ScheduleParams schedule;
    bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { base, adapter, fusion, cond_head };

inline std::string_view to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::base: return "base";
        case ParamGroup::adapter: return "adapter";
        case ParamGroup::fusion: return "fusion";
        case ParamGroup::cond_head: return "cond_head";
    }
    return "?";
}

template <typename T>
struct LayerParams {
    Mat<T> ln1_g, ln1_b;
    Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Mat<T> ln2_g, ln2_b;
    Mat<T> w1, b1, w2, b2;
    // Condition-only low-rank adapters: delta = (x A) B.
    Mat<T> lora_q_a, lora_q_b, lora_k_a, lora_k_b, lora_v_a, lora_v_b;
};

/// All model tensors. Biases and norm gains are 1 x n matrices so every
/// parameter shares one type for optimizers, checkpoints and gradient checks.
template <typename T>
struct ModelParams {
    Mat<T> embed_w, embed_b;
    Mat<T> text_w, text_b;
    Mat<T> time_w1, time_b1, time_w2, time_b2;
    std::vector<LayerParams<T>> layers;
    Mat<T> lnf_g, lnf_b;
    Mat<T> head_w, head_b;
    Mat<T> fusion;                      // C x C, zero at init
    Mat<T> cond_embed_w, cond_embed_b;  // declared trainable head for condition tokens

    template <typename F>
    void visit(F&& f) { visit_impl(*this, f); }
    template <typename F>
    void visit(F&& f) const { visit_impl(*this, f); }

    /// Same shapes, all zeros (gradient buffers).
    ModelParams zeros_like() const {
        ModelParams z = *this;
        z.visit([](const std::string&, Mat<T>& m, ParamGroup) { m.setZero(); });
        return z;
    }

   private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f) {
        f("embed.w", s.embed_w, ParamGroup::base);
        f("embed.b", s.embed_b, ParamGroup::base);
        f("text.w", s.text_w, ParamGroup::base);
        f("text.b", s.text_b, ParamGroup::base);
        f("time.w1", s.time_w1, ParamGroup::base);
        f("time.b1", s.time_b1, ParamGroup::base);
        f("time.w2", s.time_w2, ParamGroup::base);
        f("time.b2", s.time_b2, ParamGroup::base);
        for (std::size_t l = 0; l < s.layers.size(); ++l) {
            auto& L = s.layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            f(p + "ln1.g", L.ln1_g, ParamGroup::base);
            f(p + "ln1.b", L.ln1_b, ParamGroup::base);
            f(p + "wq", L.wq, ParamGroup::base);
            f(p + "bq", L.bq, ParamGroup::base);
            f(p + "wk", L.wk, ParamGroup::base);
            f(p + "bk", L.bk, ParamGroup::base);
            f(p + "wv", L.wv, ParamGroup::base);
            f(p + "bv", L.bv, ParamGroup::base);
            f(p + "wo", L.wo, ParamGroup::base);
            f(p + "bo", L.bo, ParamGroup::base);
            f(p + "ln2.g", L.ln2_g, ParamGroup::base);
            f(p + "ln2.b", L.ln2_b, ParamGroup::base);
            f(p + "ffn.w1", L.w1, ParamGroup::base);
            f(p + "ffn.b1", L.b1, ParamGroup::base);
            f(p + "ffn.w2", L.w2, ParamGroup::base);
            f(p + "ffn.b2", L.b2, ParamGroup::base);
            f(p + "lora.q.a", L.lora_q_a, ParamGroup::adapter);
            f(p + "lora.q.b", L.lora_q_b, ParamGroup::adapter);
            f(p + "lora.k.a", L.lora_k_a, ParamGroup::adapter);
            f(p + "lora.k.b", L.lora_k_b, ParamGroup::adapter);
            f(p + "lora.v.a", L.lora_v_a, ParamGroup::adapter);
            f(p + "lora.v.b", L.lora_v_b, ParamGroup::adapter);
        }
        f("final_ln.g", s.lnf_g, ParamGroup::base);
        f("final_ln.b", s.lnf_b, ParamGroup::base);
        f("head.w", s.head_w, ParamGroup::base);
        f("head.b", s.head_b, ParamGroup::base);
        f("fusion.w", s.fusion, ParamGroup::fusion);
        f("cond_embed.w", s.cond_embed_w, ParamGroup::cond_head);
        f("cond_embed.b", s.cond_embed_b, ParamGroup::cond_head);
    }
};

/// Condition latents before fusion; `color` is absent when no color cue is given.
template <typename T>
struct ConditionInput {
    Mat<T> id;
    std::optional<Mat<T>> color;

    bool empty() const { return id.rows() == 0; }
};

/// Z_c = Z_ID + Z_Color W (row-vector convention); Z_ID alone without color.
template <typename T>
Mat<T> fuse_conditions(const Mat<T>& z_id, const std::optional<Mat<T>>& z_color, const Mat<T>& w) {
    if (!z_color) return z_id;
    if (z_color->rows() != z_id.rows() || z_color->cols() != z_id.cols()) {
        throw Error(ErrorKind::shape, "ID and color latents must have identical shapes");
    }
    if (w.rows() != z_id.cols() || w.cols() != z_id.cols()) throw Error(ErrorKind::shape, "fusion matrix shape");
    Mat<T> out = z_id;
    out.noalias() += *z_color * w;
    return out;
}

/// Base projection x W + b, plus (x_c A) B on the condition rows only.
template <typename T>
Mat<T> project_with_adapter(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b, const Mat<T>& a_lora,
                            const Mat<T>& b_lora, int first_cond, Mat<T>* xa_out = nullptr) {
    Mat<T> y = x * w;
    y.rowwise() += b.row(0);
    const auto n_cond = x.rows() - first_cond;
    if (n_cond > 0 && a_lora.cols() > 0) {
        Mat<T> xa = x.bottomRows(n_cond) * a_lora;
        y.bottomRows(n_cond).noalias() += xa * b_lora;
        if (xa_out) *xa_out = std::move(xa);
    }
    return y;
}

/// Q', K', V' for a layer: frozen projections everywhere, adapter deltas on
/// condition rows (rows >= first_cond).
template <typename T>
std::tuple<Mat<T>, Mat<T>, Mat<T>> project_qkv(const Mat<T>& x, const LayerParams<T>& L, int first_cond) {
    return {project_with_adapter(x, L.wq, L.bq, L.lora_q_a, L.lora_q_b, first_cond),
            project_with_adapter(x, L.wk, L.bk, L.lora_k_a, L.lora_k_b, first_cond),
            project_with_adapter(x, L.wv, L.bv, L.lora_v_a, L.lora_v_b, first_cond)};
}

namespace detail {

constexpr double kLnEps = 1e-5;

template <typename T>
struct LnSaved {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, LnSaved<T>* saved) {
    const auto n = x.rows();
    const T inv_w = T(1) / static_cast<T>(x.cols());
    Mat<T> xhat(n, x.cols());
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mean = x.row(i).sum() * inv_w;
        auto centered = x.row(i).array() - mean;
        const T var = centered.square().sum() * inv_w;
        rstd[i] = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        xhat.row(i) = centered * rstd[i];
    }
    Mat<T> y = (xhat.array().rowwise() * g.row(0).array()).matrix();
    y.rowwise() += b.row(0);
    if (saved) {
        saved->xhat = std::move(xhat);
        saved->rstd = std::move(rstd);
    }
    return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LnSaved<T>& s, const Mat<T>& g, Mat<T>* dg, Mat<T>* db) {
    if (dg) dg->row(0) += (dy.array() * s.xhat.array()).colwise().sum().matrix();
    if (db) db->row(0) += dy.colwise().sum();
    Mat<T> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
    const T inv_w = T(1) / static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T m1 = dxhat.row(i).sum() * inv_w;
        const T m2 = dxhat.row(i).dot(s.xhat.row(i)) * inv_w;
        dx.row(i) = (dxhat.row(i).array() - m1 - s.xhat.row(i).array() * m2) * s.rstd[i];
    }
    return dx;
}

template <typename T>
T gelu(T x) {
    constexpr T c = T(0.7978845608028654);
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
    constexpr T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
T silu(T x) { return x / (T(1) + std::exp(-x)); }

template <typename T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

template <typename T>
void add_bias_grad(Mat<T>* db, const Mat<T>& dy) {
    if (db) db->row(0) += dy.colwise().sum();
}

template <typename T>
void add_weight_grad(Mat<T>* dw, const Mat<T>& x, const Mat<T>& dy) {
    if (dw) dw->noalias() += x.transpose() * dy;
}

}  // namespace detail

/// Per-layer keys/values of the condition stream, valid for every timestep.
template <typename T>
struct KVCache {
    std::vector<Mat<T>> keys;
    std::vector<Mat<T>> values;

    bool empty() const { return keys.empty() || keys.front().rows() == 0; }
};

/// Everything one forward pass needs: current latent x_t (all video tokens),
/// timestep, caption embedding and condition latents.
template <typename T>
struct ModelInput {
    Mat<T> x_t;
    LatentShape shape;
    int timestep = 0;
    Mat<T> text;  // raw caption embedding (n_t x width)
    ConditionInput<T> cond;
    std::vector<TokenPosition> positions;  // per noise token; empty means grid order
};

/// Toy conditioned diffusion transformer. Sequence [noise ; text ; cond] runs
/// through pre-norm blocks with the causal mask; the timestep embedding is added
/// to noise rows only, so the condition stream is timestep-independent and its
/// keys/values can be cached.
template <typename T>
class ConditionedDiT {
   public:
    explicit ConditionedDiT(const ModelConfig& config) : config_(config), schedule_(config.schedule) {
        if (config.width % config.heads != 0) throw Error(ErrorKind::invalid_argument, "width must divide by heads");
        if (!(config.local_attention_init >= 0.0)) {
            throw Error(ErrorKind::invalid_argument, "local_attention_init must be non-negative");
        }
        if (!(config.timestep_balance_cap == 0.0 || config.timestep_balance_cap >= 1.0)) {
            throw Error(ErrorKind::invalid_argument, "timestep_balance_cap must be 0 or at least 1");
        }
        if (!(config.data_std >= 0.0)) throw Error(ErrorKind::invalid_argument, "data_std must be non-negative");
        if (config.lora_rank < 0 || config.lora_rank > config.width) {
            throw Error(ErrorKind::invalid_argument, "adapter rank must lie in [0, width]");
        }
        initialize();
    }

    const ModelConfig& config() const { return config_; }
    const DiffusionSchedule& schedule() const { return schedule_; }

    /// Draws a training timestep in [1, steps] (see timestep_balance_cap).
    int draw_timestep(Rng& rng) const {
        const int steps = schedule_.steps();
        if (config_.timestep_balance_cap <= 0.0 || config_.data_std <= 0.0) return uniform_int(rng, 1, steps);
        double total = 0.0;
        std::vector<double> cdf(static_cast<std::size_t>(steps));
        for (int t = 1; t <= steps; ++t) {
            const double scale = output_scales(t).second;
            total += std::min(1.0 / (scale * scale), config_.timestep_balance_cap);
            cdf[static_cast<std::size_t>(t - 1)] = total;
        }
        const double u = uniform01(rng) * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return std::min(steps, static_cast<int>(it - cdf.begin()) + 1);
    }
    ModelParams<T>& params() { return params_; }
    const ModelParams<T>& params() const { return params_; }

    Mat<T> embed_text(std::string_view caption) const {
        return embed_caption<T>(caption, config_.width, derive_seed(config_.seed, "text"));
    }

    /// Activations saved by a training forward pass.
    struct LayerTape {
        Mat<T> h_in;
        detail::LnSaved<T> ln1;
        Mat<T> x1, q, k, v;
        Mat<T> xa_q, xa_k, xa_v;
        std::vector<Mat<T>> probs;       // dense pass, or noise/text rows when blocked
        std::vector<Mat<T>> probs_cond;  // condition block when blocked
        Mat<T> attn;
        detail::LnSaved<T> ln2;
        Mat<T> x2, f1, g;
    };

    struct Tape {
        SequenceCounts counts;
        Mat<T> time_in, time_pre, time_act;
        Mat<T> text_raw;
        Mat<T> cond_fused;
        std::optional<Mat<T>> cond_color;
        Mat<T> cond_id;
        Mat<T> noise_in;
        std::vector<TokenPosition> positions;
        Mat<T> mask;
        std::vector<LayerTape> layers;
        detail::LnSaved<T> lnf;
        Mat<T> xf;
        double out_scale = 1.0;
    };

    /// Epsilon prediction for every noise slot. `hidden_trace` (optional)
    /// receives the full hidden state after each layer.
    Mat<T> forward(const ModelInput<T>& in, std::vector<Mat<T>>* hidden_trace = nullptr) const {
        return run(in, nullptr, nullptr, hidden_trace);
    }

    Mat<T> forward_train(const ModelInput<T>& in, Tape& tape) const { return run(in, &tape, nullptr, nullptr); }

    /// Runs the condition tokens alone through every layer (condition rows only
    /// ever attend to condition rows) and keeps their adapted K, V per layer.
    KVCache<T> precompute_kv_cache(const ConditionInput<T>& cond, const LatentShape& shape) const {
        KVCache<T> cache;
        if (cond.empty()) return cache;
        const auto positions = grid_positions(shape);
        Mat<T> h = embed_cond(fuse_conditions(cond.id, cond.color, params_.fusion), positions);
        const RowBlocks whole{{0, static_cast<int>(h.rows())}};
        for (const auto& L : params_.layers) {
            Mat<T> x = detail::layer_norm(h, L.ln1_g, L.ln1_b, static_cast<detail::LnSaved<T>*>(nullptr));
            Mat<T> q = project(x, L.wq, L.bq, L.lora_q_a, L.lora_q_b, 0, whole, nullptr);
            Mat<T> k = project(x, L.wk, L.bk, L.lora_k_a, L.lora_k_b, 0, whole, nullptr);
            Mat<T> v = project(x, L.wv, L.bv, L.lora_v_a, L.lora_v_b, 0, whole, nullptr);
            if (config_.rotary) {
                rotate_positions(q, 0, positions, config_.heads);
                rotate_positions(k, 0, positions, config_.heads);
            }
            Mat<T> a = masked_attention<T>(q, k, v, nullptr, config_.heads);
            cache.keys.push_back(k);
            cache.values.push_back(v);
            block_tail(h, a, L, whole, nullptr);
        }
        return cache;
    }

    /// Forward over noise + text rows only, reading condition keys/values from the cache.
    Mat<T> forward_with_cache(const ModelInput<T>& in, const KVCache<T>& cache) const {
        if (cache.empty()) {
            ModelInput<T> plain{in.x_t, in.shape, in.timestep, in.text, {}, in.positions};
            return run(plain, nullptr, nullptr, nullptr);
        }
        return run(in, nullptr, &cache, nullptr);
    }

    /// Backpropagates d(loss)/d(eps_pred) into `grads`. Parameter groups with
    /// `want[group] == false` skip their weight gradients.
    void backward(const Tape& tape, const Mat<T>& d_out, ModelParams<T>& grads,
                  const std::array<bool, 4>& want = {true, true, true, true}) const;

   private:
    void initialize();

    Mat<T> embed_cond(const Mat<T>& fused, const std::vector<TokenPosition>& positions) const {
        Mat<T> h = fused * params_.cond_embed_w;
        h.rowwise() += params_.cond_embed_b.row(0);
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
            h.row(i) += video_position_encoding<T>(positions[static_cast<std::size_t>(i)], config_.width);
        }
        return h;
    }

    // Row ranges whose linear maps are evaluated as separate products. Matrix
    // products round differently for different row counts, so the condition
    // stream is always multiplied on its own; that keeps the full pass and the
    // cached pass bitwise identical.
    using RowBlocks = std::vector<std::pair<int, int>>;

    static Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b, const RowBlocks& blocks) {
        Mat<T> y(x.rows(), w.cols());
        for (auto [r0, len] : blocks) {
            y.middleRows(r0, len).noalias() = x.middleRows(r0, len) * w;
            y.middleRows(r0, len).rowwise() += b.row(0);
        }
        return y;
    }

    static Mat<T> project(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b, const Mat<T>& a_lora,
                          const Mat<T>& b_lora, int first_cond, const RowBlocks& blocks, Mat<T>* xa_out) {
        Mat<T> y(x.rows(), w.cols());
        for (auto [r0, len] : blocks) {
            const int local_cond = std::clamp(first_cond - r0, 0, len);
            y.middleRows(r0, len) =
                project_with_adapter(Mat<T>(x.middleRows(r0, len)), w, b, a_lora, b_lora, local_cond, xa_out);
        }
        return y;
    }

    // Attention output projection, residual, norm, feed-forward, residual.
    void block_tail(Mat<T>& h, const Mat<T>& attn, const LayerParams<T>& L, const RowBlocks& blocks,
                    LayerTape* lt) const {
        h += linear(attn, L.wo, L.bo, blocks);
        detail::LnSaved<T>* ln2 = lt ? &lt->ln2 : nullptr;
        Mat<T> x2 = detail::layer_norm(h, L.ln2_g, L.ln2_b, ln2);
        Mat<T> f1 = linear(x2, L.w1, L.b1, blocks);
        Mat<T> g = f1.unaryExpr([](T v) { return detail::gelu(v); });
        h += linear(g, L.w2, L.b2, blocks);
        if (lt) {
            lt->attn = attn;
            lt->x2 = std::move(x2);
            lt->f1 = std::move(f1);
            lt->g = std::move(g);
        }
    }

    Mat<T> time_embedding(int t, Mat<T>* in, Mat<T>* pre, Mat<T>* act) const {
        Mat<T> s(1, config_.width);
        sinusoid<T>(static_cast<double>(t) * 1000.0 / schedule_.steps(), config_.width, s.data());
        if (in) *in = s;
        Mat<T> p = s * params_.time_w1;
        p += params_.time_b1;
        Mat<T> a = p.unaryExpr([](T v) { return detail::silu(v); });
        Mat<T> e = a * params_.time_w2;
        e += params_.time_b2;
        if (pre) *pre = std::move(p);
        if (act) *act = std::move(a);
        return e;
    }

    Mat<T> run(const ModelInput<T>& in, Tape* tape, const KVCache<T>* cache, std::vector<Mat<T>>* trace) const;

    void rotate_video_rows(Mat<T>& q, Mat<T>& k, const SequenceCounts& counts,
                           const std::vector<TokenPosition>& positions, bool inverse = false) const {
        for (Mat<T>* m : {&q, &k}) {
            rotate_positions(*m, 0, positions, config_.heads, inverse);
            if (counts.cond > 0) rotate_positions(*m, counts.noise + counts.text, positions, config_.heads, inverse);
        }
    }

    // {skip, scale} of the output reading at timestep t; {0, 1} without it.
    std::pair<double, double> output_scales(int t) const {
        const double sd = config_.data_std;
        if (sd <= 0.0) return {0.0, 1.0};
        const double a = schedule_.alpha_bar(t);
        const double var = a * sd * sd + (1.0 - a);
        return {std::sqrt(1.0 - a) / var, -std::sqrt(a) * sd / std::sqrt(var)};
    }

    ModelConfig config_;
    DiffusionSchedule schedule_;
    ModelParams<T> params_;
};

template <typename T>
void ConditionedDiT<T>::initialize() {
    const int d = config_.width, C = config_.latent_channels, r = config_.lora_rank;
    const int f = d * config_.ffn_mult;
    Rng rng(derive_seed(config_.seed, "model_init"));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gauss = [&](int rows, int cols, double stddev) {
        Mat<T> m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng) * stddev);
        return m;
    };
    auto zeros = [](int rows, int cols) { return Mat<T>::Zero(rows, cols).eval(); };
    auto ones = [](int cols) { return Mat<T>::Ones(1, cols).eval(); };
    auto& P = params_;
    P.embed_w = gauss(C, d, 1.0 / std::sqrt(C));
    P.embed_b = zeros(1, d);
    P.text_w = gauss(d, d, 1.0 / std::sqrt(d));
    P.text_b = zeros(1, d);
    P.time_w1 = gauss(d, d, 1.0 / std::sqrt(d));
    P.time_b1 = zeros(1, d);
    P.time_w2 = gauss(d, d, 1.0 / std::sqrt(d));
    P.time_b2 = zeros(1, d);
    P.layers.clear();
    for (int l = 0; l < config_.layers; ++l) {
        LayerParams<T> L;
        L.ln1_g = ones(d);
        L.ln1_b = zeros(1, d);
        L.wq = gauss(d, d, 1.0 / std::sqrt(d));
        L.bq = zeros(1, d);
        L.wk = gauss(d, d, 1.0 / std::sqrt(d));
        L.bk = zeros(1, d);
        L.wv = gauss(d, d, 1.0 / std::sqrt(d));
        L.bv = zeros(1, d);
        L.wo = gauss(d, d, 1.0 / std::sqrt(d) / std::sqrt(2.0 * config_.layers));
        L.bo = zeros(1, d);
        L.ln2_g = ones(d);
        L.ln2_b = zeros(1, d);
        L.w1 = gauss(d, f, 1.0 / std::sqrt(d));
        L.b1 = zeros(1, f);
        L.w2 = gauss(f, d, 1.0 / std::sqrt(f) / std::sqrt(2.0 * config_.layers));
        L.b2 = zeros(1, d);
        L.lora_q_a = gauss(d, r, 1.0 / std::sqrt(d));
        L.lora_q_b = zeros(r, d);
        L.lora_k_a = gauss(d, r, 1.0 / std::sqrt(d));
        L.lora_k_b = zeros(r, d);
        L.lora_v_a = gauss(d, r, 1.0 / std::sqrt(d));
        L.lora_v_b = zeros(r, d);
        P.layers.push_back(std::move(L));
    }
    P.lnf_g = ones(d);
    P.lnf_b = zeros(1, d);
    P.head_w = gauss(d, C, 1.0 / std::sqrt(d));
    P.head_b = zeros(1, C);
    P.fusion = zeros(C, C);
    P.cond_embed_w = P.embed_w;
    P.cond_embed_b = P.embed_b;
    if (config_.local_attention_init > 0.0) {
        for (auto& L : P.layers) {
            L.bq = gauss(1, d, config_.local_attention_init);
            L.bk = L.bq;
        }
    }
}

template <typename T>
Mat<T> ConditionedDiT<T>::run(const ModelInput<T>& in, Tape* tape, const KVCache<T>* cache,
                              std::vector<Mat<T>>* trace) const {
    const int d = config_.width;
    if (in.x_t.cols() != config_.latent_channels || in.x_t.rows() != in.shape.tokens()) {
        throw Error(ErrorKind::shape, "x_t must be tokens x latent_channels for the given latent shape");
    }
    if (in.text.rows() > 0 && in.text.cols() != d) throw Error(ErrorKind::shape, "text embedding width mismatch");
    const auto positions = in.positions.empty() ? grid_positions(in.shape) : in.positions;
    if (static_cast<Eigen::Index>(positions.size()) != in.x_t.rows()) {
        throw Error(ErrorKind::shape, "one position per noise token required");
    }

    // Condition rows are materialized only without a cache.
    Mat<T> fused;
    if (!cache && !in.cond.empty()) {
        if (in.cond.id.cols() != config_.latent_channels) throw Error(ErrorKind::shape, "condition channel mismatch");
        fused = fuse_conditions(in.cond.id, in.cond.color, params_.fusion);
    } else {
        fused.resize(0, config_.latent_channels);
    }
    const auto seq = build_sequence<T>(in.x_t, positions, in.text, fused);
    const SequenceCounts counts = seq.counts;
    const int n = counts.total();
    const int first_cond = counts.noise + counts.text;
    if (cache && static_cast<int>(cache->keys.size()) != config_.layers) {
        throw Error(ErrorKind::shape, "KV cache layer count mismatch");
    }
    if (cache && cache->keys.front().rows() != counts.noise) {
        throw Error(ErrorKind::shape, "KV cache token count must equal noise token count");
    }

    // Input embedding.
    Mat<T> time_in, time_pre, time_act;
    Mat<T> temb = time_embedding(in.timestep, tape ? &time_in : nullptr, tape ? &time_pre : nullptr,
                                 tape ? &time_act : nullptr);
    Mat<T> h(n, d);
    h.topRows(counts.noise).noalias() = in.x_t * params_.embed_w;
    for (int i = 0; i < counts.noise; ++i) {
        h.row(i) += params_.embed_b.row(0) + temb.row(0) +
                    video_position_encoding<T>(positions[static_cast<std::size_t>(i)], d);
    }
    if (counts.text > 0) {
        h.middleRows(counts.noise, counts.text).noalias() = in.text * params_.text_w;
        for (int i = 0; i < counts.text; ++i) {
            h.row(counts.noise + i) += params_.text_b.row(0) + text_position_encoding<T>(i, d);
        }
    }
    if (counts.cond > 0) h.bottomRows(counts.cond) = embed_cond(fused, positions);

    Mat<T> mask;
    const Mat<T>* mask_ptr = nullptr;
    if (counts.cond > 0 && config_.dense_mask && !cache) {
        mask = causal_mask<T>(counts);
        mask_ptr = &mask;
    }
    if (tape) {
        tape->counts = counts;
        tape->time_in = std::move(time_in);
        tape->time_pre = std::move(time_pre);
        tape->time_act = std::move(time_act);
        tape->text_raw = in.text;
        tape->noise_in = in.x_t;
        tape->positions = positions;
        tape->cond_fused = fused;
        tape->cond_id = in.cond.id;
        tape->cond_color = in.cond.color;
        tape->mask = mask;
        tape->layers.assign(static_cast<std::size_t>(config_.layers), LayerTape{});
    }
    if (trace) trace->clear();

    RowBlocks blocks{{0, n}};
    if (counts.cond > 0) blocks = {{0, first_cond}, {first_cond, counts.cond}};

    for (int l = 0; l < config_.layers; ++l) {
        const auto& L = params_.layers[static_cast<std::size_t>(l)];
        LayerTape* lt = tape ? &tape->layers[static_cast<std::size_t>(l)] : nullptr;
        if (lt) lt->h_in = h;
        Mat<T> x = detail::layer_norm(h, L.ln1_g, L.ln1_b, lt ? &lt->ln1 : nullptr);
        Mat<T> q = project(x, L.wq, L.bq, L.lora_q_a, L.lora_q_b, first_cond, blocks, lt ? &lt->xa_q : nullptr);
        Mat<T> k = project(x, L.wk, L.bk, L.lora_k_a, L.lora_k_b, first_cond, blocks, lt ? &lt->xa_k : nullptr);
        Mat<T> v = project(x, L.wv, L.bv, L.lora_v_a, L.lora_v_b, first_cond, blocks, lt ? &lt->xa_v : nullptr);
        if (config_.rotary) rotate_video_rows(q, k, counts, positions);
        Mat<T> a;
        if (cache) {
            Mat<T> kk(n + counts.noise, d), vv(n + counts.noise, d);
            kk << k, cache->keys[static_cast<std::size_t>(l)];
            vv << v, cache->values[static_cast<std::size_t>(l)];
            a = masked_attention<T>(q, kk, vv, nullptr, config_.heads);
        } else if (counts.cond > 0 && !config_.dense_mask) {
            const int nc = counts.cond;
            a.resize(n, d);
            a.topRows(first_cond) = masked_attention<T>(Mat<T>(q.topRows(first_cond)), k, v, nullptr, config_.heads,
                                                        lt ? &lt->probs : nullptr);
            a.bottomRows(nc) = masked_attention<T>(Mat<T>(q.bottomRows(nc)), Mat<T>(k.bottomRows(nc)),
                                                   Mat<T>(v.bottomRows(nc)), nullptr, config_.heads,
                                                   lt ? &lt->probs_cond : nullptr);
        } else {
            a = masked_attention<T>(q, k, v, mask_ptr, config_.heads, lt ? &lt->probs : nullptr);
        }
        if (lt) {
            lt->x1 = std::move(x);
            lt->q = std::move(q);
            lt->k = std::move(k);
            lt->v = std::move(v);
        }
        block_tail(h, a, L, blocks, lt);
        if (trace) trace->push_back(h);
    }

    detail::LnSaved<T>* lnf = tape ? &tape->lnf : nullptr;
    Mat<T> xf = detail::layer_norm<T>(h.topRows(counts.noise), params_.lnf_g, params_.lnf_b, lnf);
    Mat<T> out = xf * params_.head_w;
    out.rowwise() += params_.head_b.row(0);
    const auto [skip, scale] = output_scales(in.timestep);
    if (config_.data_std > 0.0) out = static_cast<T>(skip) * in.x_t + static_cast<T>(scale) * out;
    if (tape) {
        tape->xf = std::move(xf);
        tape->out_scale = scale;
    }
    return out;
}

template <typename T>
void ConditionedDiT<T>::backward(const Tape& tape, const Mat<T>& d_out, ModelParams<T>& grads,
                                 const std::array<bool, 4>& want) const {
    const auto& P = params_;
    const auto counts = tape.counts;
    const int n = counts.total();
    const int d = config_.width;
    const bool base = want[static_cast<int>(ParamGroup::base)];
    const bool adapter = want[static_cast<int>(ParamGroup::adapter)];
    auto maybe = [](bool on, Mat<T>& m) { return on ? &m : static_cast<Mat<T>*>(nullptr); };

    // Output head.
    const Mat<T> d_head = static_cast<T>(tape.out_scale) * d_out;
    detail::add_weight_grad(maybe(base, grads.head_w), tape.xf, d_head);
    detail::add_bias_grad(maybe(base, grads.head_b), d_head);
    Mat<T> dxf = d_head * P.head_w.transpose();
    Mat<T> dh = Mat<T>::Zero(n, d);
    dh.topRows(counts.noise) =
        detail::layer_norm_backward(dxf, tape.lnf, P.lnf_g, maybe(base, grads.lnf_g), maybe(base, grads.lnf_b));

    for (int l = config_.layers - 1; l >= 0; --l) {
        const auto& L = P.layers[static_cast<std::size_t>(l)];
        auto& G = grads.layers[static_cast<std::size_t>(l)];
        const auto& lt = tape.layers[static_cast<std::size_t>(l)];

        // Feed-forward branch.
        detail::add_weight_grad(maybe(base, G.w2), lt.g, dh);
        detail::add_bias_grad(maybe(base, G.b2), dh);
        Mat<T> dg = dh * L.w2.transpose();
        Mat<T> df1 = dg.binaryExpr(lt.f1, [](T a, T x) { return a * detail::gelu_grad(x); });
        detail::add_weight_grad(maybe(base, G.w1), lt.x2, df1);
        detail::add_bias_grad(maybe(base, G.b1), df1);
        Mat<T> dx2 = df1 * L.w1.transpose();
        dh += detail::layer_norm_backward(dx2, lt.ln2, L.ln2_g, maybe(base, G.ln2_g), maybe(base, G.ln2_b));

        // Attention branch.
        detail::add_weight_grad(maybe(base, G.wo), lt.attn, dh);
        detail::add_bias_grad(maybe(base, G.bo), dh);
        Mat<T> dattn = dh * L.wo.transpose();
        Mat<T> dq, dk, dv;
        if (counts.cond > 0 && !config_.dense_mask) {
            const int nt = counts.noise + counts.text, nc = counts.cond;
            Mat<T> dq_nt, dq_c, dk_c, dv_c;
            masked_attention_backward<T>(Mat<T>(lt.q.topRows(nt)), lt.k, lt.v, lt.probs, Mat<T>(dattn.topRows(nt)),
                                         config_.heads, dq_nt, dk, dv);
            masked_attention_backward<T>(Mat<T>(lt.q.bottomRows(nc)), Mat<T>(lt.k.bottomRows(nc)),
                                         Mat<T>(lt.v.bottomRows(nc)), lt.probs_cond, Mat<T>(dattn.bottomRows(nc)),
                                         config_.heads, dq_c, dk_c, dv_c);
            dq.resize(n, d);
            dq.topRows(nt) = dq_nt;
            dq.bottomRows(nc) = dq_c;
            dk.bottomRows(nc) += dk_c;
            dv.bottomRows(nc) += dv_c;
        } else {
            masked_attention_backward<T>(lt.q, lt.k, lt.v, lt.probs, dattn, config_.heads, dq, dk, dv);
        }

        if (config_.rotary) rotate_video_rows(dq, dk, counts, tape.positions, true);
        Mat<T> dx1 = dq * L.wq.transpose();
        dx1.noalias() += dk * L.wk.transpose();
        dx1.noalias() += dv * L.wv.transpose();
        detail::add_weight_grad(maybe(base, G.wq), lt.x1, dq);
        detail::add_weight_grad(maybe(base, G.wk), lt.x1, dk);
        detail::add_weight_grad(maybe(base, G.wv), lt.x1, dv);
        detail::add_bias_grad(maybe(base, G.bq), dq);
        detail::add_bias_grad(maybe(base, G.bk), dk);
        detail::add_bias_grad(maybe(base, G.bv), dv);

        if (counts.cond > 0 && config_.lora_rank > 0) {
            const Mat<T> xc = lt.x1.bottomRows(counts.cond);
            auto lora = [&](const Mat<T>& dy_all, const Mat<T>& xa, const Mat<T>& A, const Mat<T>& B, Mat<T>& gA,
                            Mat<T>& gB) {
                Mat<T> dy = dy_all.bottomRows(counts.cond);
                Mat<T> dxa = dy * B.transpose();
                if (adapter) {
                    gB.noalias() += xa.transpose() * dy;
                    gA.noalias() += xc.transpose() * dxa;
                }
                dx1.bottomRows(counts.cond).noalias() += dxa * A.transpose();
            };
            lora(dq, lt.xa_q, L.lora_q_a, L.lora_q_b, G.lora_q_a, G.lora_q_b);
            lora(dk, lt.xa_k, L.lora_k_a, L.lora_k_b, G.lora_k_a, G.lora_k_b);
            lora(dv, lt.xa_v, L.lora_v_a, L.lora_v_b, G.lora_v_a, G.lora_v_b);
        }
        dh += detail::layer_norm_backward(dx1, lt.ln1, L.ln1_g, maybe(base, G.ln1_g), maybe(base, G.ln1_b));
    }

    // Input embeddings.
    const auto dn = dh.topRows(counts.noise);
    if (base) {
        grads.embed_w.noalias() += tape.noise_in.transpose() * dn;
        grads.embed_b.row(0) += dn.colwise().sum();
        Mat<T> dtemb = dn.colwise().sum();
        grads.time_b2 += dtemb;
        grads.time_w2.noalias() += tape.time_act.transpose() * dtemb;
        Mat<T> dact = dtemb * P.time_w2.transpose();
        Mat<T> dpre = dact.binaryExpr(tape.time_pre, [](T a, T x) { return a * detail::silu_grad(x); });
        grads.time_b1 += dpre;
        grads.time_w1.noalias() += tape.time_in.transpose() * dpre;
        if (counts.text > 0) {
            const auto dt = dh.middleRows(counts.noise, counts.text);
            grads.text_w.noalias() += tape.text_raw.transpose() * dt;
            grads.text_b.row(0) += dt.colwise().sum();
        }
    }
    if (counts.cond > 0) {
        const auto dc = dh.bottomRows(counts.cond);
        if (want[static_cast<int>(ParamGroup::cond_head)]) {
            grads.cond_embed_w.noalias() += tape.cond_fused.transpose() * dc;
            grads.cond_embed_b.row(0) += dc.colwise().sum();
        }
        if (want[static_cast<int>(ParamGroup::fusion)] && tape.cond_color) {
            Mat<T> dz = dc * P.cond_embed_w.transpose();
            grads.fusion.noalias() += tape.cond_color->transpose() * dz;
        }
    }
}

}  // namespace flextraj
