// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flextraj/dit/checkpoint.hpp"
#include "flextraj/dit/sampler.hpp"
#include "flextraj/io/config.hpp"
#include "flextraj/metrics.hpp"
#include "flextraj/scenes.hpp"
#include "flextraj/train/trainer.hpp"

namespace flextraj {

/// The four evaluation task families.
enum class TaskFamily { dense, spatially_sparse, temporally_sparse, unaligned };

inline constexpr std::array<TaskFamily, 4> kTaskFamilies{TaskFamily::dense, TaskFamily::spatially_sparse,
                                                          TaskFamily::temporally_sparse, TaskFamily::unaligned};

constexpr std::string_view to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::dense: return "dense";
        case TaskFamily::spatially_sparse: return "spatially_sparse";
        case TaskFamily::temporally_sparse: return "temporally_sparse";
        case TaskFamily::unaligned: return "unaligned";
    }
    return "?";
}

struct EvalSettings {
    double sparse_p_s = 0.2;      // spatially sparse task keeps this fraction of points
    double sparse_p_t = 0.25;     // temporally sparse task keeps this fraction of frames
    double unaligned_shift = 10;  // pixels, direction drawn per scene
    double blob_tolerance = 80.0;
    int blob_min_pixels = 4;
    int sample_steps = 50;
    bool use_kv_cache = true;
    bool clamp_clean = true;  // project clean estimates onto the pixel range while sampling
    double eta = 0.0;         // 0 is deterministic DDIM, 1 matches ancestral sampling
};

struct BenchmarkConfig {
    std::uint64_t seed = 0;
    RandomSceneParams scenes;
    int train_scenes = 200;
    int eval_scenes = 20;
    CodecParams codec;
    ModelConfig model;
    int base_steps = 3000;
    double base_lr = 1e-3;
    int base_batch = 1;  // examples per base update
    int batch = 4;       // examples per update for the conditioned and unconditioned runs
    CurriculumConfig curriculum;
    EvalSettings eval;
};

/// Desk-scale defaults: the 1200/2400/14000/4000 stage ratio scaled to about
/// 3000 steps, learning rates raised tenfold for the short run (ratio kept).
inline BenchmarkConfig default_benchmark(std::uint64_t seed) {
    BenchmarkConfig c;
    c.seed = seed;
    c.curriculum.stage_steps = {167, 333, 1944, 556};
    c.curriculum.lr_aligned = 1e-3;
    c.curriculum.lr_unaligned = 1e-4;
    c.curriculum.seed = derive_seed(seed, "curriculum");
    c.model.seed = derive_seed(seed, "model");
    c.model.local_attention_init = 2.5;
    c.model.timestep_balance_cap = 50.0;
    return c;
}

inline nlohmann::json to_json(const CurriculumConfig& c) {
    return {{"stage_steps", c.stage_steps},
            {"p_c", c.p_c},
            {"p_s_range", {c.p_s_range.lo, c.p_s_range.hi}},
            {"p_t_range", {c.p_t_range.lo, c.p_t_range.hi}},
            {"lr_aligned", c.lr_aligned},
            {"lr_unaligned", c.lr_unaligned},
            {"mode", to_string(c.mode)},
            {"seed", c.seed},
            {"max_shift", c.max_shift},
            {"scale_range", {c.scale_range.lo, c.scale_range.hi}}};
}

inline nlohmann::json to_json(const BenchmarkConfig& c) {
    return {{"seed", c.seed},
            {"frame_size", {c.scenes.frame_size.height, c.scenes.frame_size.width}},
            {"frame_count", c.scenes.frame_count},
            {"objects", {c.scenes.min_objects, c.scenes.max_objects}},
            {"train_scenes", c.train_scenes},
            {"eval_scenes", c.eval_scenes},
            {"codec", {{"temporal_factor", c.codec.temporal_factor}, {"spatial_factor", c.codec.spatial_factor},
                       {"channels", c.codec.channels}, {"seed", c.codec.seed}}},
            {"model", to_json(c.model)},
            {"base_steps", c.base_steps},
            {"base_batch", c.base_batch},
            {"batch", c.batch},
            {"base_lr", c.base_lr},
            {"curriculum", to_json(c.curriculum)},
            {"eval", {{"sparse_p_s", c.eval.sparse_p_s}, {"sparse_p_t", c.eval.sparse_p_t},
                      {"unaligned_shift", c.eval.unaligned_shift}, {"blob_tolerance", c.eval.blob_tolerance},
                      {"blob_min_pixels", c.eval.blob_min_pixels}, {"sample_steps", c.eval.sample_steps},
                      {"use_kv_cache", c.eval.use_kv_cache}, {"clamp_clean", c.eval.clamp_clean},
                      {"eta", c.eval.eta}}}};
}

/// Reads the benchmark keys of a key = value config on top of the defaults.
inline BenchmarkConfig benchmark_from_config(const KeyValueConfig& kv) {
    auto c = default_benchmark(static_cast<std::uint64_t>(kv.get_int("seed", 0)));
    c.scenes.frame_size.height = static_cast<int>(kv.get_int("scene.height", c.scenes.frame_size.height));
    c.scenes.frame_size.width = static_cast<int>(kv.get_int("scene.width", c.scenes.frame_size.width));
    c.scenes.frame_count = static_cast<int>(kv.get_int("scene.frames", c.scenes.frame_count));
    c.scenes.min_objects = static_cast<int>(kv.get_int("scene.min_objects", c.scenes.min_objects));
    c.scenes.max_objects = static_cast<int>(kv.get_int("scene.max_objects", c.scenes.max_objects));
    c.train_scenes = static_cast<int>(kv.get_int("train_scenes", c.train_scenes));
    c.eval_scenes = static_cast<int>(kv.get_int("eval_scenes", c.eval_scenes));
    c.codec.channels = static_cast<int>(kv.get_int("codec.channels", c.codec.channels));
    c.model.latent_channels = c.codec.channels;
    c.model.width = static_cast<int>(kv.get_int("model.width", c.model.width));
    c.model.layers = static_cast<int>(kv.get_int("model.layers", c.model.layers));
    c.model.heads = static_cast<int>(kv.get_int("model.heads", c.model.heads));
    c.model.lora_rank = static_cast<int>(kv.get_int("model.lora_rank", c.model.lora_rank));
    c.model.dense_mask = kv.get_bool("model.dense_mask", c.model.dense_mask);
    c.model.data_std = kv.get_double("model.data_std", c.model.data_std);
    c.model.rotary = kv.get_bool("model.rotary", c.model.rotary);
    c.model.local_attention_init = kv.get_double("model.local_attention_init", c.model.local_attention_init);
    c.model.timestep_balance_cap = kv.get_double("model.timestep_balance_cap", c.model.timestep_balance_cap);
    c.model.schedule.steps = static_cast<int>(kv.get_int("model.diffusion_steps", c.model.schedule.steps));
    c.base_steps = static_cast<int>(kv.get_int("base.steps", c.base_steps));
    c.base_lr = kv.get_double("base.lr", c.base_lr);
    c.base_batch = static_cast<int>(kv.get_int("base.batch", c.base_batch));
    c.batch = static_cast<int>(kv.get_int("train.batch", c.batch));
    auto& cc = c.curriculum;
    const auto stages = kv.get_list("train.stage_steps", {double(cc.stage_steps[0]), double(cc.stage_steps[1]),
                                                          double(cc.stage_steps[2]), double(cc.stage_steps[3])});
    if (stages.size() != 4) throw Error(ErrorKind::parse, "train.stage_steps needs four values");
    for (std::size_t i = 0; i < 4; ++i) cc.stage_steps[i] = static_cast<int>(stages[i]);
    cc.p_c = kv.get_double("train.p_c", cc.p_c);
    const auto ps = kv.get_list("train.p_s_range", {cc.p_s_range.lo, cc.p_s_range.hi});
    const auto pt = kv.get_list("train.p_t_range", {cc.p_t_range.lo, cc.p_t_range.hi});
    if (ps.size() != 2 || pt.size() != 2) throw Error(ErrorKind::parse, "sampling ranges need two values");
    cc.p_s_range = {ps[0], ps[1]};
    cc.p_t_range = {pt[0], pt[1]};
    cc.lr_aligned = kv.get_double("train.lr_aligned", cc.lr_aligned);
    cc.lr_unaligned = kv.get_double("train.lr_unaligned", cc.lr_unaligned);
    cc.mode = curriculum_mode_from_string(kv.get_string("train.mode", std::string(to_string(cc.mode))));
    cc.max_shift = kv.get_double("train.max_shift", cc.max_shift);
    c.eval.sample_steps = static_cast<int>(kv.get_int("eval.sample_steps", c.eval.sample_steps));
    c.eval.blob_tolerance = kv.get_double("eval.blob_tolerance", c.eval.blob_tolerance);
    c.eval.unaligned_shift = kv.get_double("eval.unaligned_shift", c.eval.unaligned_shift);
    c.eval.use_kv_cache = kv.get_bool("eval.use_kv_cache", c.eval.use_kv_cache);
    c.eval.clamp_clean = kv.get_bool("eval.clamp_clean", c.eval.clamp_clean);
    c.eval.eta = kv.get_double("eval.eta", c.eval.eta);
    kv.reject_unused();
    validate(cc);
    return c;
}

inline SceneSpec benchmark_scene(const BenchmarkConfig& c, bool held_out, int index) {
    const auto root = derive_seed(c.seed, held_out ? "eval_scenes" : "train_scenes");
    return random_scene_spec(derive_seed(root, static_cast<std::uint64_t>(index)), c.scenes);
}

/// One evaluation case: what the model sees and the motion it should produce.
struct EvalCase {
    Video8 first_frame;
    std::string caption;
    TrajectorySet condition;
    std::vector<ExtractedTrajectory> target;  // object centers the video should follow
    std::vector<Rgb8> keys;                   // object colors for blob extraction
    FrameSize frame_size;
    int frame_count = 0;
};

inline EvalCase make_eval_case(const SceneSpec& spec, TaskFamily family, const EvalSettings& s) {
    EvalCase c;
    c.caption = scene_caption(spec);
    c.frame_size = spec.frame_size;
    c.frame_count = spec.frame_count;
    for (const auto& o : spec.objects) c.keys.push_back(o.color);
    Rng rng(derive_seed(spec.seed, to_string(family)));
    if (family == TaskFamily::unaligned) {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const auto pair = make_unaligned_pair(spec, {s.unaligned_shift * std::cos(a), s.unaligned_shift * std::sin(a), false});
        c.first_frame = pair.first_frame;
        c.condition = pair.condition;
        c.target = pair.intended;
        return c;
    }
    const auto scene = generate_scene(spec);
    c.first_frame = Video8(1, spec.frame_size.height, spec.frame_size.width);
    std::copy(scene.video.frame(0).begin(), scene.video.frame(0).end(), c.first_frame.data().begin());
    c.target = center_paths(spec);
    c.condition = scene.trajectories;
    SparsitySpec sp;
    sp.seed = rng();
    if (family == TaskFamily::spatially_sparse) {
        sp.p_s = s.sparse_p_s;
        c.condition = spatial_sparsify(c.condition, sp);
        // Keep at least one point per object so every target has guidance.
        if (c.condition.trajectories.empty()) c.condition = scene.trajectories;
    } else if (family == TaskFamily::temporally_sparse) {
        sp.p_t = s.sparse_p_t;
        c.condition = temporal_sparsify(c.condition, sp).set;
    }
    return c;
}

struct CaseResult {
    Video8 video;
    std::vector<ExtractedTrajectory> extracted;
};

/// Samples a video for one case. The model generates the difference from the
/// still clip built from the first frame; the still clip is added back before
/// decoding.
template <typename T>
CaseResult run_case(const ConditionedDiT<T>& model, const LatentCodec<T>& codec, const EvalCase& ec, bool conditioned,
                    const EvalSettings& s, std::uint64_t seed) {
    Video8 clip(ec.frame_count, ec.frame_size.height, ec.frame_size.width);
    std::copy(ec.first_frame.frame(0).begin(), ec.first_frame.frame(0).end(), clip.frame(0).begin());
    const auto grid = codec.encode(normalize_video<T>(clip));
    const Mat<T> still = still_clip_tokens(clip, codec);
    const int hw = grid.shape.height * grid.shape.width;
    const auto moving = still.rows() - hw;
    ConditionInput<T> cond;
    if (conditioned) cond = encode_condition(ec.condition, codec);
    SamplerOptions so;
    so.steps = s.sample_steps;
    so.seed = seed;
    so.use_kv_cache = s.use_kv_cache;
    so.eta = s.eta;
    const CleanProjector<T> clamp = [&](Mat<T>& x0) {
        Mat<T> full = x0.bottomRows(moving) + still.bottomRows(moving);
        codec.clamp_to_pixel_range(full);
        x0.bottomRows(moving) = full - still.bottomRows(moving);
    };
    LatentGrid<T> out = grid;
    out.tokens = sample(model, grid.shape, Mat<T>(still.topRows(hw)), model.embed_text(ec.caption), cond, so,
                        s.clamp_clean ? clamp : CleanProjector<T>{});
    out.tokens.bottomRows(moving) += still.bottomRows(moving);
    CaseResult r;
    r.video = quantize_video(codec.decode(out));
    r.extracted = extract_blob_trajectories(r.video, ec.keys, s.blob_tolerance, s.blob_min_pixels);
    return r;
}

struct FamilyScore {
    double traj_err = 0.0;
    double traj_sim = 0.0;
    double consistency = 0.0;
    int scored_err = 0;   // cases with a defined TrajErr
    int scored_sim = 0;
    int cases = 0;
    double detected = 0.0;
};

inline nlohmann::json to_json(const FamilyScore& f) {
    return {{"traj_err", f.scored_err ? nlohmann::json(f.traj_err) : nlohmann::json(nullptr)},
            {"traj_sim", f.scored_sim ? nlohmann::json(f.traj_sim) : nlohmann::json(nullptr)},
            {"consistency_proxy", f.consistency},
            {"cases", f.cases},
            {"cases_with_traj_err", f.scored_err},
            {"cases_with_traj_sim", f.scored_sim},
            {"detected_fraction", f.detected}};
}

/// Scores a model on held-out scenes for one family. TrajErr and TrajSIM are
/// averaged over the cases where they are defined; `detected` is the fraction
/// of target frames where extraction found the object, reported beside them
/// because undetected frames drop out of both metrics.
template <typename T>
FamilyScore evaluate_family(const ConditionedDiT<T>& model, const LatentCodec<T>& codec, const std::vector<SceneSpec>& specs,
                            TaskFamily family, bool conditioned, const EvalSettings& s, std::uint64_t seed) {
    FamilyScore f;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto ec = make_eval_case(specs[i], family, s);
        const auto r = run_case(model, codec, ec, conditioned, s, derive_seed(seed, static_cast<std::uint64_t>(i)));
        ++f.cases;
        int want = 0, found = 0;
        for (const auto& tr : ec.target) {
            for (int t = 0; t < tr.frames(); ++t) {
                if (!tr.valid[static_cast<std::size_t>(t)]) continue;
                ++want;
                found += r.extracted[tr.id].valid[static_cast<std::size_t>(t)];
            }
        }
        f.detected += want ? static_cast<double>(found) / want : 1.0;
        f.consistency += frame_consistency_proxy(normalize_video<double>(r.video), LatentCodec<double>(codec.params()));
        try {
            f.traj_err += traj_err(r.extracted, ec.target, Matching::by_id, ec.frame_size);
            ++f.scored_err;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::undefined_metric) throw;
        }
        try {
            f.traj_sim += traj_sim(r.extracted, ec.target);
            ++f.scored_sim;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::undefined_metric) throw;
        }
    }
    if (f.scored_err) f.traj_err /= f.scored_err;
    if (f.scored_sim) f.traj_sim /= f.scored_sim;
    if (f.cases) {
        f.consistency /= f.cases;
        f.detected /= f.cases;
    }
    return f;
}

inline constexpr int kReportSchemaVersion = 1;

/// Rethrows a failure with the pipeline stage that raised it.
template <typename F>
auto in_stage(std::string_view stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.kind(), "stage " + std::string(stage) + ": " + e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorKind::io, "stage " + std::string(stage) + ": " + e.what());
    }
}

using ProgressFn = std::function<void(const std::string&)>;

inline std::vector<TrainingExample<float>> benchmark_training_data(const BenchmarkConfig& c, const LatentCodec<float>& codec) {
    std::vector<TrainingExample<float>> out;
    out.reserve(static_cast<std::size_t>(c.train_scenes));
    for (int i = 0; i < c.train_scenes; ++i) out.push_back(make_example(generate_scene(benchmark_scene(c, false, i)), codec));
    return out;
}

inline std::vector<SceneSpec> benchmark_eval_scenes(const BenchmarkConfig& c) {
    std::vector<SceneSpec> out;
    for (int i = 0; i < c.eval_scenes; ++i) out.push_back(benchmark_scene(c, true, i));
    return out;
}

/// Where a benchmark run keeps its checkpoints; empty keeps everything in memory.
struct RunPaths {
    std::filesystem::path dir;
    bool resume = false;
};

/// Base weights trained without conditions, loaded from `paths.dir/base.ckpt`
/// when resuming and the file exists.
inline ConditionedDiT<float> pretrained_base(const BenchmarkConfig& c, const std::vector<TrainingExample<float>>& data,
                                             const LatentCodec<float>& codec, const RunPaths& paths = {}) {
    ConditionedDiT<float> model(c.model);
    const auto file = paths.dir.empty() ? std::filesystem::path{} : paths.dir / "base.ckpt";
    if (paths.resume && !file.empty() && std::filesystem::exists(file)) {
        auto ck = load_checkpoint<float>(file);
        if (ck.config != c.model) throw Error(ErrorKind::invalid_argument, "base checkpoint model config differs");
        model.params() = ck.params;
        return model;
    }
    train_base(model, data, c.base_steps, c.base_lr, derive_seed(c.seed, "base"), codec, c.base_batch);
    if (!file.empty()) save_checkpoint(file, Checkpoint<float>{c.model, model.params(), {}, {{"role", "base"}}});
    return model;
}

/// The curriculum run on top of the base. Checkpoints and the step log go to
/// `paths.dir/<label>/`.
inline ConditionedDiT<float> train_conditioned(const ConditionedDiT<float>& base, const std::vector<TrainingExample<float>>& data,
                                               const BenchmarkConfig& c, const LatentCodec<float>& codec,
                                               const RunPaths& paths = {}, const std::string& label = "conditioned") {
    auto model = base;
    CurriculumRunOptions ro;
    ro.accumulate = c.batch;
    if (!paths.dir.empty()) {
        ro.checkpoint_dir = paths.dir / label / "checkpoints";
        ro.log_path = paths.dir / label / "train_log.jsonl";
        ro.resume = paths.resume;
    }
    run_curriculum(model, data, c.curriculum, codec, ro);
    return model;
}

/// The same base trained further without conditions, for as many steps and
/// examples per step as the curriculum, at the aligned learning rate.
inline ConditionedDiT<float> train_unconditioned(const ConditionedDiT<float>& base,
                                                 const std::vector<TrainingExample<float>>& data, const BenchmarkConfig& c,
                                                 const LatentCodec<float>& codec, const RunPaths& paths = {}) {
    auto model = base;
    const auto file = paths.dir.empty() ? std::filesystem::path{} : paths.dir / "unconditioned.ckpt";
    if (paths.resume && !file.empty() && std::filesystem::exists(file)) {
        model.params() = load_checkpoint<float>(file).params;
        return model;
    }
    train_base(model, data, c.curriculum.total_steps(), c.curriculum.lr_aligned, derive_seed(c.seed, "unconditioned"),
               codec, c.batch);
    if (!file.empty()) save_checkpoint(file, Checkpoint<float>{c.model, model.params(), {}, {{"role", "unconditioned"}}});
    return model;
}

/// Scores of one model over all four task families.
struct ArmScores {
    std::string name;
    bool conditioned = true;
    std::array<FamilyScore, 4> families;

    /// Mean TrajErr over families where it is defined; NaN if none is.
    double mean_traj_err() const {
        double sum = 0.0;
        int n = 0;
        for (const auto& f : families) {
            if (!f.scored_err) continue;
            sum += f.traj_err;
            ++n;
        }
        return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }
};

inline ArmScores evaluate_arm(const std::string& name, const ConditionedDiT<float>& model, const LatentCodec<float>& codec,
                              const std::vector<SceneSpec>& specs, bool conditioned, const BenchmarkConfig& c) {
    ArmScores a{name, conditioned, {}};
    for (std::size_t i = 0; i < kTaskFamilies.size(); ++i) {
        a.families[i] = evaluate_family(model, codec, specs, kTaskFamilies[i], conditioned, c.eval,
                                        derive_seed(c.seed, "eval_noise"));
    }
    return a;
}

inline nlohmann::json to_json(const ArmScores& a) {
    nlohmann::json fam = nlohmann::json::object();
    for (std::size_t i = 0; i < kTaskFamilies.size(); ++i) fam[std::string(to_string(kTaskFamilies[i]))] = to_json(a.families[i]);
    const double m = a.mean_traj_err();
    return {{"name", a.name},
            {"conditioned", a.conditioned},
            {"families", fam},
            {"mean_traj_err", std::isnan(m) ? nlohmann::json(nullptr) : nlohmann::json(m)}};
}

/// Fixed description of how the metrics were computed, carried in every report.
inline nlohmann::json metric_conventions(const BenchmarkConfig& c) {
    return {{"traj_err_normalizer", "frame diagonal sqrt(H^2 + W^2)"},
            {"matching", to_string(Matching::by_id)},
            {"vanished_frames", "frames where either trajectory is invalid are skipped; detected_fraction reports coverage"},
            {"extraction", {{"method", "color-key blob centroid"},
                            {"tolerance", c.eval.blob_tolerance},
                            {"min_pixels", c.eval.blob_min_pixels}}},
            {"consistency_proxy", "mean cosine similarity of codec encodings of consecutive frames"}};
}

struct PipelineResult {
    nlohmann::json report;
    ArmScores conditioned;
    ArmScores unconditioned;
};

/// Scenes -> base -> conditioned and unconditioned training -> sampling on
/// held-out scenes -> extraction -> metrics. Every failure names its stage.
inline PipelineResult full_pipeline(const BenchmarkConfig& c, const RunPaths& paths = {}, const ProgressFn& progress = {}) {
    auto note = [&](const std::string& m) {
        if (progress) progress(m);
    };
    validate(c.curriculum);
    LatentCodec<float> codec(c.codec);
    const auto data = in_stage("gen-scenes", [&] { return benchmark_training_data(c, codec); });
    const auto evals = in_stage("gen-scenes", [&] { return benchmark_eval_scenes(c); });
    note("generated " + std::to_string(data.size()) + " training and " + std::to_string(evals.size()) + " held-out scenes");
    const auto base = in_stage("train-base", [&] { return pretrained_base(c, data, codec, paths); });
    note("base trained");
    const auto cond = in_stage("train", [&] { return train_conditioned(base, data, c, codec, paths); });
    note("conditioned model trained");
    const auto uncond = in_stage("train-unconditioned", [&] { return train_unconditioned(base, data, c, codec, paths); });
    note("unconditioned model trained");
    PipelineResult r;
    r.conditioned = in_stage("evaluate", [&] { return evaluate_arm("conditioned", cond, codec, evals, true, c); });
    r.unconditioned = in_stage("evaluate", [&] { return evaluate_arm("unconditioned", uncond, codec, evals, false, c); });
    note("evaluation done");
    nlohmann::json ratio = nlohmann::json::object();
    for (std::size_t i = 0; i < kTaskFamilies.size(); ++i) {
        const auto& a = r.conditioned.families[i];
        const auto& b = r.unconditioned.families[i];
        ratio[std::string(to_string(kTaskFamilies[i]))] =
            a.scored_err && b.scored_err && b.traj_err > 0 ? nlohmann::json(a.traj_err / b.traj_err) : nlohmann::json(nullptr);
    }
    const double mc = r.conditioned.mean_traj_err(), mu = r.unconditioned.mean_traj_err();
    r.report = {{"schema_version", kReportSchemaVersion},
                {"kind", "benchmark"},
                {"config", to_json(c)},
                {"metrics", metric_conventions(c)},
                {"arms", {to_json(r.conditioned), to_json(r.unconditioned)}},
                {"traj_err_ratio", ratio},
                {"mean_traj_err_ratio", mu > 0 && !std::isnan(mc) ? nlohmann::json(mc / mu) : nlohmann::json(nullptr)}};
    return r;
}

/// One curriculum run per mode from a shared base, scored on all families.
inline nlohmann::json run_ablation(const BenchmarkConfig& c, const std::vector<CurriculumMode>& modes,
                                   const RunPaths& paths = {}, const ProgressFn& progress = {},
                                   std::vector<ArmScores>* rows = nullptr) {
    if (modes.empty()) throw Error(ErrorKind::invalid_argument, "ablation needs at least one mode");
    LatentCodec<float> codec(c.codec);
    const auto data = in_stage("gen-scenes", [&] { return benchmark_training_data(c, codec); });
    const auto evals = in_stage("gen-scenes", [&] { return benchmark_eval_scenes(c); });
    const auto base = in_stage("train-base", [&] { return pretrained_base(c, data, codec, paths); });
    if (progress) progress("base trained");
    nlohmann::json arms = nlohmann::json::array();
    for (const auto mode : modes) {
        auto mc = c;
        mc.curriculum.mode = mode;
        const std::string name(to_string(mode));
        const auto model = in_stage("train " + name, [&] { return train_conditioned(base, data, mc, codec, paths, name); });
        auto arm = in_stage("evaluate " + name, [&] { return evaluate_arm(name, model, codec, evals, true, mc); });
        if (progress) progress(name + " mean TrajErr " + std::to_string(arm.mean_traj_err()));
        arms.push_back(to_json(arm));
        if (rows) rows->push_back(std::move(arm));
    }
    return {{"schema_version", kReportSchemaVersion},
            {"kind", "ablation"},
            {"config", to_json(c)},
            {"metrics", metric_conventions(c)},
            {"arms", arms}};
}

/// Plain-text comparison table of an ablation or benchmark report.
inline std::string arms_table(const nlohmann::json& report) {
    std::ostringstream out;
    auto cell = [](const nlohmann::json& v) {
        if (v.is_null()) return std::string("     n/a");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%8.4f", v.get<double>());
        return std::string(buf);
    };
    auto pad = [](std::string s, std::size_t n) {
        s.resize(std::max(s.size(), n), ' ');
        return s;
    };
    // Two header rows: family names over their TrajErr / TrajSIM column pair.
    out << pad("", 15);
    for (auto f : kTaskFamilies) out << "   " << pad(std::string(to_string(f)), 17);
    out << "      mean\n" << pad("arm", 15);
    for (std::size_t i = 0; i < kTaskFamilies.size(); ++i) out << "   traj_err traj_sim";
    out << "  traj_err\n";
    for (const auto& a : report.at("arms")) {
        out << pad(a.at("name").get<std::string>(), 15);
        for (auto f : kTaskFamilies) {
            const auto& row = a.at("families").at(std::string(to_string(f)));
            out << "   " << cell(row.at("traj_err")) << " " << cell(row.at("traj_sim"));
        }
        out << "  " << cell(a.at("mean_traj_err")) << "\n";
    }
    return out.str();
}

}  // namespace flextraj
