// SPDX-License-Identifier: Apache-2.0
// flextraj command-line tool. Each subcommand writes its outputs plus one
// manifest.json into --out-dir through a staging directory.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "flextraj/pipeline.hpp"
#include "run_support.hpp"

#ifndef FLEXTRAJ_VERSION
#define FLEXTRAJ_VERSION "0.0.0"
#endif

using namespace flextraj;
using namespace flextraj::cli;

namespace {

struct Common {
    std::string out_dir;
    bool force = false;
};

/// Shared state of one invocation: staging directory and manifest under construction.
struct Run {
    RunManifest manifest;
    std::unique_ptr<StagedDir> stage;

    fs::path out(const std::string& rel) const {
        auto p = stage->path() / rel;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        return p;
    }
    void input(const fs::path& p) {
        manifest.inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    }
};

std::string read_text(const fs::path& p) {
    auto in = open_input(p, false);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    write_file_atomic(p, [&](std::ostream& o) { o << text; }, false);
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

void write_frames(const Run& run, const std::string& dir, const Video8& v) {
    for (int t = 0; t < v.frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "/frame_%03d.ppm", t);
        write_ppm(run.out(dir + name).string(), v, t);
    }
}

TrajectorySet load_trajectories(Run& run, const std::string& path) {
    run.input(path);
    return trajectories_from_string(read_text(path));
}

std::vector<ExtractedTrajectory> as_tracks(const TrajectorySet& s) {
    std::vector<ExtractedTrajectory> out;
    for (const auto& tr : s.trajectories) {
        ExtractedTrajectory e;
        e.id = tr.track_id;
        for (const auto& p : tr.samples) {
            e.positions.push_back({p.position.x, p.position.y});
            e.valid.push_back(p.visible);
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Benchmark configuration from a config file, with an optional seed override.
BenchmarkConfig load_benchmark(Run& run, const std::string& path, std::optional<std::uint64_t> seed) {
    KeyValueConfig kv;
    if (!path.empty()) {
        run.input(path);
        kv = KeyValueConfig::load(path);
    } else {
        kv = KeyValueConfig::parse("flextraj-config 1\n");
    }
    if (seed) kv.set("seed", std::to_string(*seed));
    auto c = benchmark_from_config(kv);
    run.manifest.config_hash = sha256_text(to_json(c).dump());
    run.manifest.seeds["root"] = c.seed;
    run.manifest.seeds["model"] = c.model.seed;
    run.manifest.seeds["curriculum"] = c.curriculum.seed;
    return c;
}

SpatialMode spatial_mode(const std::string& s) {
    if (s == "random") return SpatialMode::random;
    if (s == "segment") return SpatialMode::segment;
    throw Error(ErrorKind::invalid_argument, "unknown spatial mode '" + s + "'");
}

TemporalMode temporal_mode(const std::string& s) {
    if (s == "uniform") return TemporalMode::uniform;
    if (s == "random") return TemporalMode::random;
    throw Error(ErrorKind::invalid_argument, "unknown temporal mode '" + s + "'");
}

std::vector<CurriculumMode> parse_modes(const std::string& list) {
    std::vector<CurriculumMode> out;
    std::stringstream ss(list);
    std::string m;
    while (std::getline(ss, m, ',')) {
        if (m == "randommix") m = "random_mix";
        out.push_back(curriculum_mode_from_string(m));
    }
    return out;
}

int dispatch(const std::vector<std::string>& args);

void emit_error(const std::string& command, int code, std::string_view kind, const std::string& message) {
    nlohmann::json rec = {{"error", {{"command", command}, {"exit_code", code}, {"kind", kind}, {"message", message}}}};
    std::cerr << rec.dump() << std::endl;
}

}  // namespace

namespace {

int dispatch(const std::vector<std::string>& args) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    CLI::App app{"flextraj: trajectory-conditioned video diffusion at desk scale"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out-dir", common.out_dir, "output directory")->required();
        sub->add_flag("--force", common.force, "replace a non-empty output directory");
    };

    // gen-scene
    std::string spec_path;
    std::uint64_t scene_seed = 0;
    int max_objects = 2;
    auto* gen = app.add_subcommand("gen-scene", "render a scene spec (or a seeded random one)");
    gen->add_option("--spec", spec_path, "scene spec file");
    gen->add_option("--seed", scene_seed, "seed for a random scene when no spec is given");
    gen->add_option("--max-objects", max_objects, "objects in a random scene")->check(CLI::Range(1, 4));
    add_common(gen);

    // encode
    std::string traj_path;
    double grid_size = 0.0;
    bool latents = false;
    auto* enc = app.add_subcommand("encode", "rasterize trajectories into ID and color condition videos");
    enc->add_option("--trajectories", traj_path, "trajectory file")->required();
    enc->add_option("--grid-size", grid_size, "sampling grid size (default: sqrt of the point count)");
    enc->add_flag("--latents", latents, "also write the tokenized condition grids");
    add_common(enc);

    // sparsify
    double p_s = 1.0, p_t = 1.0;
    std::string smode = "random", tmode = "uniform";
    std::uint64_t op_seed = 0;
    auto* sps = app.add_subcommand("sparsify", "drop trajectories and frames");
    sps->add_option("--trajectories", traj_path, "trajectory file")->required();
    sps->add_option("--p-s", p_s, "fraction of trajectories kept");
    sps->add_option("--p-t", p_t, "fraction of frames kept");
    sps->add_option("--spatial-mode", smode, "random | segment");
    sps->add_option("--temporal-mode", tmode, "uniform | random");
    sps->add_option("--seed", op_seed, "seed");
    add_common(sps);

    // jitter
    JitterSpec js;
    std::string jmode = "shift", crop = "center";
    auto* jit = app.add_subcommand("jitter", "shift or resize-and-crop trajectories");
    jit->add_option("--trajectories", traj_path, "trajectory file")->required();
    jit->add_option("--mode", jmode, "shift | resize_crop");
    jit->add_option("--dx", js.dx, "horizontal shift, pixels");
    jit->add_option("--dy", js.dy, "vertical shift, pixels");
    jit->add_option("--scale", js.scale, "resize factor");
    jit->add_option("--crop", crop, "explicit | center | random");
    jit->add_option("--ox", js.ox, "explicit crop offset x");
    jit->add_option("--oy", js.oy, "explicit crop offset y");
    jit->add_option("--seed", op_seed, "seed for random crops");
    add_common(jit);

    // train / pipeline / ablate
    std::string config_path, work_dir, modes = "annealing,random_mix,sparse2dense";
    std::optional<std::uint64_t> seed;
    bool resume = false;
    auto add_training = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "benchmark config (key = value)");
        sub->add_option("--seed", seed, "root seed, overrides the config");
        sub->add_option("--work-dir", work_dir, "checkpoint directory kept across runs");
        sub->add_flag("--resume", resume, "continue from the newest checkpoint in --work-dir");
        add_common(sub);
    };
    auto* trn = app.add_subcommand("train", "pretrain the base, then run the curriculum");
    add_training(trn);
    auto* pip = app.add_subcommand("pipeline", "scenes, training, sampling and metrics for all task families");
    add_training(pip);
    auto* abl = app.add_subcommand("ablate", "one curriculum run per mode plus a comparison table");
    abl->add_option("--modes", modes, "comma-separated curriculum modes");
    add_training(abl);

    // sample
    std::string ckpt_path, first_frame, caption;
    int frames = 17, steps = 50;
    double eta = 0.0;
    bool no_cache = false, no_clamp = false;
    auto* smp = app.add_subcommand("sample", "generate a video from a first frame and optional trajectories");
    smp->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    smp->add_option("--first-frame", first_frame, "first frame image (P6)")->required();
    smp->add_option("--trajectories", traj_path, "condition trajectories (omit for unconditioned sampling)");
    smp->add_option("--caption", caption, "text prompt");
    smp->add_option("--frames", frames, "frames to generate");
    smp->add_option("--steps", steps, "sampling steps");
    smp->add_option("--eta", eta, "0 deterministic, 1 ancestral");
    smp->add_option("--seed", op_seed, "noise seed");
    smp->add_flag("--no-cache", no_cache, "recompute condition keys/values every step");
    smp->add_flag("--no-clamp", no_clamp, "do not project clean estimates onto the pixel range");
    add_common(smp);

    // metrics
    std::string generated, source, matching = "by_id";
    int height = 0, width = 0;
    auto* met = app.add_subcommand("metrics", "TrajErr and TrajSIM between two trajectory files");
    met->add_option("--generated", generated, "trajectories extracted from a generated video")->required();
    met->add_option("--source", source, "reference trajectories")->required();
    met->add_option("--matching", matching, "by_id | nearest_start");
    met->add_option("--height", height, "frame height (default: from the source file)");
    met->add_option("--width", width, "frame width (default: from the source file)");
    add_common(met);

    // replay
    std::string manifest_path;
    auto* rep = app.add_subcommand("replay", "rerun a manifest and check the outputs match bitwise");
    rep->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
    add_common(rep);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    std::string command = args.empty() ? "" : args.front();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        emit_error(command, exit_usage, "usage", e.what());
        return exit_usage;
    }
    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();

    try {
        if (sub == rep) {
            const auto old = manifest_from_json(nlohmann::json::parse(read_text(manifest_path)));
            for (const auto& in : old.inputs) {
                if (sha256_file(in.at("path").get<std::string>()) != in.at("sha256").get<std::string>()) {
                    throw Error(ErrorKind::invalid_argument, "input " + in.at("path").get<std::string>() + " changed since the run");
                }
            }
            std::vector<std::string> again;
            for (std::size_t i = 0; i < old.args.size(); ++i) {
                const auto& a = old.args[i];
                if (a == "--out-dir" || a == "--work-dir") {
                    ++i;
                    continue;
                }
                if (a == "--resume" || a == "--force") continue;
                again.push_back(a);
            }
            again.insert(again.end(), {"--out-dir", common.out_dir});
            if (common.force) again.push_back("--force");
            const int code = dispatch(again);
            if (code != exit_ok) return code;
            const auto now = manifest_from_json(nlohmann::json::parse(read_text(fs::path(common.out_dir) / "manifest.json")));
            if (now.outputs != old.outputs) {
                emit_error(command, exit_replay_mismatch, "replay_mismatch", "outputs differ from " + manifest_path);
                return exit_replay_mismatch;
            }
            std::cout << "replay identical: " << old.outputs.size() << " files" << std::endl;
            return exit_ok;
        }

        Run run;
        run.manifest.command = command;
        run.manifest.args = args;
        run.manifest.tool_version = FLEXTRAJ_VERSION;
        run.stage = std::make_unique<StagedDir>(common.out_dir, common.force);
        std::optional<std::uint64_t> seed_used;

        if (sub == gen) {
            SceneSpec spec;
            if (!spec_path.empty()) {
                run.input(spec_path);
                spec = scene_spec_from_string(read_text(spec_path));
            } else {
                RandomSceneParams p;
                p.max_objects = max_objects;
                spec = random_scene_spec(scene_seed, p);
                run.manifest.seeds["scene"] = scene_seed;
            }
            const auto scene = generate_scene(spec);
            write_frames(run, "frames", scene.video);
            write_text(run.out("scene.txt"), scene_spec_to_string(spec));
            write_text(run.out("trajectories.txt"), trajectories_to_string(scene.trajectories));
            write_text(run.out("caption.txt"), scene.caption + "\n");
            run.manifest.config_hash = sha256_text(scene_spec_to_string(spec));
        } else if (sub == enc) {
            const auto set = load_trajectories(run, traj_path);
            const double g = grid_size > 0 ? grid_size : effective_grid_size(set.trajectories.size());
            const auto pair = encode_set(set, g);
            write_frames(run, "id", pair.id_video);
            if (pair.color_video) write_frames(run, "color", *pair.color_video);
            write_json(run.out("footprint.json"), {{"grid_size", g},
                                                   {"height", pair.footprint.height},
                                                   {"width", pair.footprint.width},
                                                   {"scale", pair.footprint.scale}});
            if (latents) {
                LatentCodec<double> codec(CodecParams{});
                const auto id = codec.encode(normalize_video<double>(pair.id_video));
                write_file_atomic(run.out("id_latents.grid"), [&](std::ostream& o) { write_grid(o, id); });
                if (pair.color_video) {
                    const auto col = codec.encode(normalize_video<double>(*pair.color_video));
                    write_file_atomic(run.out("color_latents.grid"), [&](std::ostream& o) { write_grid(o, col); });
                }
            }
            run.manifest.config_hash = sha256_text(nlohmann::json{{"grid_size", g}, {"latents", latents}}.dump());
        } else if (sub == sps) {
            const auto set = load_trajectories(run, traj_path);
            SparsitySpec s{p_s, spatial_mode(smode), p_t, temporal_mode(tmode), op_seed};
            const auto spatial = spatial_sparsify(set, s);
            const auto temporal = temporal_sparsify(spatial, s);
            write_text(run.out("trajectories.txt"), trajectories_to_string(temporal.set));
            std::vector<int> kept;
            for (std::size_t t = 0; t < temporal.kept.size(); ++t)
                if (temporal.kept[t]) kept.push_back(static_cast<int>(t));
            write_json(run.out("kept_frames.json"), {{"kept_frames", kept}});
            run.manifest.seeds["sparsify"] = op_seed;
            run.manifest.config_hash = sha256_text(
                nlohmann::json{{"p_s", p_s}, {"p_t", p_t}, {"spatial_mode", smode}, {"temporal_mode", tmode}}.dump());
        } else if (sub == jit) {
            const auto set = load_trajectories(run, traj_path);
            if (jmode == "shift") js.mode = JitterMode::shift;
            else if (jmode == "resize_crop") js.mode = JitterMode::resize_crop;
            else throw Error(ErrorKind::invalid_argument, "unknown jitter mode '" + jmode + "'");
            if (crop == "explicit") js.crop = CropMode::explicit_offset;
            else if (crop == "center") js.crop = CropMode::center;
            else if (crop == "random") js.crop = CropMode::random;
            else throw Error(ErrorKind::invalid_argument, "unknown crop mode '" + crop + "'");
            js.seed = op_seed;
            write_text(run.out("trajectories.txt"), trajectories_to_string(unaligned_jitter(set, js)));
            run.manifest.seeds["jitter"] = op_seed;
            run.manifest.config_hash = sha256_text(nlohmann::json{{"mode", jmode}, {"dx", js.dx}, {"dy", js.dy},
                                                                  {"scale", js.scale}, {"crop", crop},
                                                                  {"ox", js.ox}, {"oy", js.oy}}.dump());
        } else if (sub == trn || sub == pip || sub == abl) {
            if (resume && work_dir.empty()) throw Error(ErrorKind::invalid_argument, "--resume needs --work-dir");
            const auto c = load_benchmark(run, config_path, seed);
            RunPaths paths{work_dir.empty() ? run.stage->path() / "work" : fs::path(work_dir), resume};
            auto progress = [](const std::string& m) { std::cerr << m << std::endl; };
            if (sub == trn) {
                LatentCodec<float> codec(c.codec);
                const auto data = in_stage("gen-scenes", [&] { return benchmark_training_data(c, codec); });
                const auto base = in_stage("train-base", [&] { return pretrained_base(c, data, codec, paths); });
                const auto model = in_stage("train", [&] { return train_conditioned(base, data, c, codec, paths); });
                save_checkpoint(run.out("base.ckpt"), Checkpoint<float>{c.model, base.params(), {}, {{"role", "base"}}});
                save_checkpoint(run.out("model.ckpt"),
                                Checkpoint<float>{c.model, model.params(), {}, {{"role", "conditioned"}}});
                fs::copy_file(paths.dir / "conditioned" / "train_log.jsonl", run.out("train_log.jsonl"),
                              fs::copy_options::overwrite_existing);
            } else if (sub == pip) {
                const auto r = full_pipeline(c, paths, progress);
                write_json(run.out("report.json"), r.report);
                write_text(run.out("table.txt"), arms_table(r.report));
                std::cout << arms_table(r.report);
            } else {
                const auto report = run_ablation(c, parse_modes(modes), paths, progress);
                write_json(run.out("report.json"), report);
                write_text(run.out("table.txt"), arms_table(report));
                std::cout << arms_table(report);
            }
            if (work_dir.empty()) fs::remove_all(run.stage->path() / "work");
        } else if (sub == smp) {
            run.input(ckpt_path);
            run.input(first_frame);
            const auto ck = load_checkpoint<float>(ckpt_path);
            ConditionedDiT<float> model(ck.config);
            model.params() = ck.params;
            LatentCodec<float> codec(CodecParams{4, 8, ck.config.latent_channels, CodecParams{}.seed});
            EvalCase ec;
            ec.first_frame = read_ppm(first_frame);
            ec.caption = caption;
            ec.frame_size = ec.first_frame.frame_size();
            ec.frame_count = frames;
            const bool conditioned = !traj_path.empty();
            if (conditioned) ec.condition = load_trajectories(run, traj_path);
            EvalSettings s;
            s.sample_steps = steps;
            s.eta = eta;
            s.use_kv_cache = !no_cache;
            s.clamp_clean = !no_clamp;
            const auto r = run_case(model, codec, ec, conditioned, s, op_seed);
            write_frames(run, "frames", r.video);
            run.manifest.seeds["noise"] = op_seed;
            run.manifest.config_hash = sha256_text(nlohmann::json{{"frames", frames}, {"steps", steps}, {"eta", eta},
                                                                  {"cache", !no_cache}, {"clamp", !no_clamp},
                                                                  {"caption", caption}}.dump());
        } else if (sub == met) {
            const auto gen_set = load_trajectories(run, generated);
            const auto src_set = load_trajectories(run, source);
            const FrameSize fs{height > 0 ? height : src_set.frame_size.height, width > 0 ? width : src_set.frame_size.width};
            const auto m = matching_from_string(matching);
            const auto g = as_tracks(gen_set), s = as_tracks(src_set);
            const auto err = traj_err_report(g, s, m, fs);
            nlohmann::json matches = nlohmann::json::array();
            for (const auto& p : err.matches) {
                matches.push_back({{"generated_id", g[p.generated].id}, {"source_id", s[p.source].id},
                                   {"frames", p.frames}, {"mean_distance_px", p.mean_distance}});
            }
            nlohmann::json report = {{"schema_version", kReportSchemaVersion},
                                     {"kind", "metrics"},
                                     {"traj_err", err.value},
                                     {"normalizer", "frame diagonal sqrt(H^2 + W^2)"},
                                     {"normalizer_px", err.normalizer},
                                     {"frame_size", {fs.height, fs.width}},
                                     {"matching", to_string(m)},
                                     {"vanished_frames", "frames where either trajectory is invalid are skipped"},
                                     {"samples", err.samples},
                                     {"matches", matches}};
            try {
                const auto sim = traj_sim_report(g, s);
                report["traj_sim"] = sim.value;
                report["traj_sim_steps"] = sim.steps;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::undefined_metric) throw;
                report["traj_sim"] = nullptr;
                report["traj_sim_note"] = e.what();
            }
            write_json(run.out("report.json"), report);
            run.manifest.config_hash = sha256_text(nlohmann::json{{"matching", matching}, {"h", fs.height}, {"w", fs.width}}.dump());
        }

        run.manifest.outputs = hash_tree(run.stage->path());
        run.manifest.duration_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        write_json(run.stage->path() / "manifest.json", to_json(run.manifest));
        run.stage->commit();
        return exit_ok;
    } catch (const Error& e) {
        const int code = exit_code_for(e.kind());
        emit_error(command, code, to_string(e.kind()), e.what());
        return code;
    } catch (const std::exception& e) {
        emit_error(command, exit_internal, "internal", e.what());
        return exit_internal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args);
}
