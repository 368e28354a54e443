// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flextraj/condition_encoder.hpp"
#include "flextraj/dit/checkpoint.hpp"
#include "flextraj/dit/model.hpp"
#include "flextraj/latent_codec.hpp"
#include "flextraj/scenes.hpp"
#include "flextraj/sparsify.hpp"
#include "flextraj/train/curriculum.hpp"
#include "flextraj/train/optimizer.hpp"

namespace flextraj {

/// Latents of the still clip that repeats frame 0 of `video` for its whole
/// length. Diffusion runs on the difference from it, so the model generates
/// motion on top of the given image instead of the image itself.
template <typename T>
Mat<T> still_clip_tokens(const Video8& video, const LatentCodec<T>& codec) {
    Video8 clip(video.frames(), video.height(), video.width());
    for (int t = 0; t < video.frames(); ++t) std::copy(video.frame(0).begin(), video.frame(0).end(), clip.frame(t).begin());
    return codec.encode(normalize_video<T>(clip)).tokens;
}

/// One training clip: clean latents, its still-clip latents, trajectories
/// and caption.
template <typename T>
struct TrainingExample {
    LatentGrid<T> latents;
    Mat<T> still;
    TrajectorySet trajectories;
    std::string caption;
};

template <typename T>
TrainingExample<T> make_example(const Scene& scene, const LatentCodec<T>& codec) {
    return {codec.encode(normalize_video<T>(scene.video)), still_clip_tokens(scene.video, codec), scene.trajectories,
            scene.caption};
}

/// Sparsify (spatial, then temporal), jitter, then strip colors if asked.
inline TrajectorySet apply_directive(const TrajectorySet& set, const StageDirective& d) {
    TrajectorySet out = set;
    if (d.sparsity) out = temporal_sparsify(spatial_sparsify(out, *d.sparsity), *d.sparsity).set;
    if (d.jitter) out = unaligned_jitter(out, *d.jitter);
    if (d.drop_color)
        for (auto& tr : out.trajectories) tr.color.reset();
    return out;
}

/// Rasterizes a trajectory set into ID and color videos and tokenizes both.
/// The grid size follows the point count, so sparse sets get larger points.
template <typename T>
ConditionInput<T> encode_condition(const TrajectorySet& set, const LatentCodec<T>& codec) {
    const auto pair = encode_set(set, effective_grid_size(set.trajectories.size()));
    ConditionInput<T> c;
    c.id = codec.encode(normalize_video<T>(pair.id_video)).tokens;
    if (pair.color_video) c.color = codec.encode(normalize_video<T>(*pair.color_video)).tokens;
    return c;
}

struct StepOptions {
    GroupMask trainable = kConditionGroups;
    bool use_condition = true;
    int accumulate = 1;  // examples per optimizer update
};

/// One noised training input: frame-0 tokens stay clean (the image the video
/// starts from), later frames hold their difference from the still clip,
/// noised at a uniform random timestep.
template <typename T>
struct NoisedInput {
    ModelInput<T> input;
    Mat<T> eps;
    int first_noised = 0;
};

template <typename T>
NoisedInput<T> make_noised_input(const ConditionedDiT<T>& model, const TrainingExample<T>& ex, ConditionInput<T> cond,
                                 Rng& rng) {
    const auto& z0 = ex.latents.tokens;
    const int hw = ex.latents.shape.height * ex.latents.shape.width;
    NoisedInput<T> out;
    out.first_noised = hw;
    const int t = model.draw_timestep(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    out.eps.resize(z0.rows(), z0.cols());
    for (Eigen::Index i = 0; i < out.eps.size(); ++i) out.eps.data()[i] = static_cast<T>(normal(rng));
    if (ex.still.rows() != z0.rows() || ex.still.cols() != z0.cols())
        throw Error(ErrorKind::shape, "still-clip latents do not match the clip");
    Mat<T> x = add_noise(Mat<T>(z0 - ex.still), out.eps, t, model.schedule());
    x.topRows(hw) = z0.topRows(hw);
    out.input = ModelInput<T>{std::move(x), ex.latents.shape, t, model.embed_text(ex.caption), std::move(cond), {}};
    return out;
}

/// Loss over noised frames only, with its gradient accumulated into `grads`.
template <typename T>
double loss_and_grad(const ConditionedDiT<T>& model, const NoisedInput<T>& ni, ModelParams<T>& grads,
                     const GroupMask& want, double weight = 1.0) {
    typename ConditionedDiT<T>::Tape tape;
    const Mat<T> pred = model.forward_train(ni.input, tape);
    const auto rows = pred.rows() - ni.first_noised;
    const Mat<T> diff = pred.bottomRows(rows) - ni.eps.bottomRows(rows);
    const double count = static_cast<double>(diff.size());
    const double loss = static_cast<double>(diff.squaredNorm()) / count;
    Mat<T> d_out = Mat<T>::Zero(pred.rows(), pred.cols());
    d_out.bottomRows(rows) = static_cast<T>(2.0 * weight / count) * diff;
    model.backward(tape, d_out, grads, want);
    return loss;
}

/// Applies the directive's augmentation, samples (t, eps), takes one
/// optimizer update with the directive's learning rate and returns the loss
/// (mean over accumulated examples). `examples` supplies one clip per draw.
template <typename T>
double train_step(ConditionedDiT<T>& model, const std::function<const TrainingExample<T>&(Rng&)>& examples,
                  const StageDirective& directive, AdamW<T>& optimizer, Rng& rng, const LatentCodec<T>& codec,
                  const StepOptions& opt = {}) {
    if (opt.accumulate < 1) throw Error(ErrorKind::invalid_argument, "accumulate must be at least 1");
    auto grads = model.params().zeros_like();
    double loss = 0.0;
    for (int k = 0; k < opt.accumulate; ++k) {
        const auto& ex = examples(rng);
        ConditionInput<T> cond;
        if (opt.use_condition) cond = encode_condition(apply_directive(ex.trajectories, directive), codec);
        const auto ni = make_noised_input(model, ex, std::move(cond), rng);
        loss += loss_and_grad(model, ni, grads, optimizer.mask(), 1.0 / opt.accumulate);
    }
    loss /= opt.accumulate;
    if (!std::isfinite(loss)) return loss;
    optimizer.step(model.params(), grads, directive.lr);
    return loss;
}

template <typename T>
std::function<const TrainingExample<T>&(Rng&)> uniform_examples(const std::vector<TrainingExample<T>>& data) {
    if (data.empty()) throw Error(ErrorKind::invalid_argument, "training needs at least one example");
    return [&data](Rng& rng) -> const TrainingExample<T>& {
        return data[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(data.size()) - 1))];
    };
}

inline nlohmann::json directive_json(const StageDirective& d) {
    nlohmann::json j = {{"stage", to_string(d.stage)}, {"lr", d.lr}, {"drop_color", d.drop_color}};
    if (d.sparsity) {
        j["sparsity"] = {{"p_s", d.sparsity->p_s},
                         {"spatial_mode", to_string(d.sparsity->spatial_mode)},
                         {"p_t", d.sparsity->p_t},
                         {"temporal_mode", to_string(d.sparsity->temporal_mode)}};
    }
    if (d.jitter) {
        j["jitter"] = {{"mode", to_string(d.jitter->mode)}, {"dx", d.jitter->dx}, {"dy", d.jitter->dy},
                       {"scale", d.jitter->scale}};
    }
    return j;
}

/// Plain diffusion training of the base weights without conditions (the
/// stand-in for a pretrained image-to-video backbone).
template <typename T>
std::vector<double> train_base(ConditionedDiT<T>& model, const std::vector<TrainingExample<T>>& data, int steps,
                               double lr, std::uint64_t seed, const LatentCodec<T>& codec, int accumulate = 1) {
    AdamW<T> opt(model.params(), kBaseGroups);
    const auto examples = uniform_examples(data);
    StageDirective d;
    d.lr = lr;
    StepOptions so;
    so.trainable = kBaseGroups;
    so.use_condition = false;
    so.accumulate = accumulate;
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
        Rng rng(derive_seed(derive_seed(seed, "base_step"), static_cast<std::uint64_t>(s)));
        const double loss = train_step(model, examples, d, opt, rng, codec, so);
        if (!std::isfinite(loss)) {
            throw Error(ErrorKind::numerical, "non-finite loss at base training step " + std::to_string(s));
        }
        losses.push_back(loss);
    }
    return losses;
}

struct CurriculumRunOptions {
    std::filesystem::path log_path;        // JSON lines; empty disables
    std::filesystem::path checkpoint_dir;  // empty disables checkpoints and resume
    bool resume = false;
    int accumulate = 1;
    AdamWParams adam;
};

struct StepRecord {
    long long step = 0;
    Stage stage = Stage::complete;
    double lr = 0.0;
    double loss = 0.0;
};

struct CurriculumResult {
    std::vector<StepRecord> records;   // steps run in this call
    std::vector<long long> boundaries; // stage boundaries crossed in this call
    long long start_step = 0;
    long long final_step = 0;
};

/// Cumulative stage boundaries, e.g. (12, 24, 140, 40) -> {12, 36, 176, 216}.
inline std::vector<long long> stage_boundaries(const CurriculumConfig& c) {
    std::vector<long long> out;
    long long acc = 0;
    for (int s : c.stage_steps) out.push_back(acc += s);
    return out;
}

namespace detail {

inline std::string checkpoint_name(long long step) {
    std::string digits = std::to_string(step);
    return "step-" + std::string(digits.size() < 8 ? 8 - digits.size() : 0, '0') + digits + ".ckpt";
}

/// Latest readable checkpoint in `dir`, judged by the step stored in its name.
inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (dir.empty() || !fs::is_directory(dir)) return std::nullopt;
    std::optional<fs::path> best;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("step-", 0) == 0 && e.path().extension() == ".ckpt") {
            if (!best || name > best->filename().string()) best = e.path();
        }
    }
    return best;
}

}  // namespace detail

/// Runs stage_for_step -> sample_directive -> train_step until the schedule
/// completes. Every step appends one JSON record to the log; checkpoints are
/// written at each cumulative stage boundary. With `resume`, training restarts
/// from the newest checkpoint in the directory and the log is cut back to it.
/// Per-step randomness is keyed by (seed, step), so a resumed run replays the
/// exact draws an uninterrupted run would make.
template <typename T>
CurriculumResult run_curriculum(ConditionedDiT<T>& model, const std::vector<TrainingExample<T>>& data,
                                const CurriculumConfig& config, const LatentCodec<T>& codec,
                                const CurriculumRunOptions& opt = {}) {
    validate(config);
    AdamW<T> optimizer(model.params(), kConditionGroups, opt.adam);
    CurriculumResult result;
    long long start = 0;
    std::vector<std::string> kept_log;
    if (opt.resume) {
        if (auto path = detail::latest_checkpoint(opt.checkpoint_dir)) {
            auto ck = load_checkpoint<T>(*path);
            if (ck.config != model.config()) throw Error(ErrorKind::invalid_argument, "checkpoint model config differs");
            model.params() = ck.params;
            start = ck.meta.at("step").template get<long long>();
            optimizer.load_state(ck.extra, ck.meta.at("optimizer_steps").template get<long long>());
        }
        if (!opt.log_path.empty() && std::filesystem::exists(opt.log_path)) {
            std::ifstream in(opt.log_path);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line, nullptr, false);
                if (j.is_discarded()) continue;
                const auto s = j.value("step", 0LL);
                if (s < start || (j.contains("event") && s <= start)) kept_log.push_back(line);
            }
        }
    }
    result.start_step = start;
    std::ofstream log;
    if (!opt.log_path.empty()) {
        if (opt.log_path.has_parent_path()) std::filesystem::create_directories(opt.log_path.parent_path());
        log.open(opt.log_path, std::ios::trunc);
        if (!log) throw Error(ErrorKind::io, "cannot open training log " + opt.log_path.string());
        for (const auto& l : kept_log) log << l << '\n';
    }
    const auto boundaries = stage_boundaries(config);
    const auto examples = uniform_examples(data);
    StepOptions so;
    so.accumulate = opt.accumulate;

    auto save = [&](long long next_step) {
        if (opt.checkpoint_dir.empty()) return;
        Checkpoint<T> ck{model.config(), model.params(), {}, {}};
        optimizer.save_state(ck.extra);
        ck.meta = {{"step", next_step},
                   {"optimizer_steps", optimizer.steps()},
                   {"mode", to_string(config.mode)},
                   {"seed", config.seed}};
        save_checkpoint(opt.checkpoint_dir / detail::checkpoint_name(next_step), ck);
    };

    for (long long step = start;; ++step) {
        const auto stage = stage_for_step(step, config);
        if (!stage) break;
        Rng directive_rng(derive_seed(derive_seed(config.seed, "directive"), static_cast<std::uint64_t>(step)));
        const auto directive = sample_directive(*stage, config, directive_rng);
        Rng rng(derive_seed(derive_seed(config.seed, "step"), static_cast<std::uint64_t>(step)));
        const double loss = train_step(model, examples, directive, optimizer, rng, codec, so);
        if (!std::isfinite(loss)) {
            throw Error(ErrorKind::numerical, "non-finite loss at step " + std::to_string(step) + " with directive " +
                                                  directive_json(directive).dump());
        }
        result.records.push_back({step, *stage, directive.lr, loss});
        if (log.is_open()) {
            nlohmann::json rec = directive_json(directive);
            rec["step"] = step;
            rec["loss"] = loss;
            log << rec.dump() << '\n';
        }
        if (std::find(boundaries.begin(), boundaries.end(), step + 1) != boundaries.end()) {
            result.boundaries.push_back(step + 1);
            if (log.is_open()) {
                log << nlohmann::json{{"event", "stage_boundary"}, {"step", step + 1}}.dump() << '\n';
            }
            save(step + 1);
        }
        if (log.is_open()) log.flush();
    }
    result.final_step = std::max<long long>(start, config.total_steps());
    return result;
}

}  // namespace flextraj
