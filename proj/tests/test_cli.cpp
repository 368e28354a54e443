// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "flextraj_cli_test";

struct Result {
    int code = -1;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result cli(const std::string& args) {
    const auto err = kRoot / "stderr.txt";
    const std::string cmd = std::string(FLEXTRAJ_CLI) + " " + args + " 2> " + err.string() + " > /dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string p(const fs::path& f) { return (kRoot / f).string(); }

nlohmann::json json_file(const fs::path& f) { return nlohmann::json::parse(slurp(kRoot / f)); }

bool schema_valid(const std::string& schema, const fs::path& doc) {
    const std::string cmd = "python3 -c \"import json,sys,jsonschema; jsonschema.validate(json.load(open(sys.argv[2])), "
                            "json.load(open(sys.argv[1])))\" " +
                            std::string(FLEXTRAJ_SOURCE_DIR) + "/schemas/" + schema + " " + (kRoot / doc).string();
    return std::system(cmd.c_str()) == 0;
}

class Cli : public ::testing::Test {
   protected:
    static void SetUpTestSuite() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        ASSERT_EQ(cli("gen-scene --seed 5 --out-dir " + p("scene")).code, 0);
    }
};

}  // namespace

TEST_F(Cli, UnknownSubcommandIsUsageError) {
    const auto r = cli("frobnicate --out-dir " + p("x"));
    EXPECT_EQ(r.code, 2);
    const auto rec = nlohmann::json::parse(r.err);
    EXPECT_EQ(rec["error"]["exit_code"], 2);
    EXPECT_FALSE(fs::exists(kRoot / "x"));
}

TEST_F(Cli, GenSceneWritesFramesTrajectoriesAndManifest) {
    EXPECT_TRUE(fs::exists(kRoot / "scene/frames/frame_016.ppm"));
    EXPECT_TRUE(fs::exists(kRoot / "scene/trajectories.txt"));
    const auto m = json_file("scene/manifest.json");
    EXPECT_EQ(m["command"], "gen-scene");
    EXPECT_EQ(m["seeds"]["scene"], 5);
    EXPECT_TRUE(schema_valid("manifest.schema.json", "scene/manifest.json"));
    EXPECT_EQ(slurp(kRoot / "scene/frames/frame_000.ppm").substr(0, 3), "P6 ");
}

TEST_F(Cli, EncodeRerunIsBitwiseIdentical) {
    const auto traj = p("scene/trajectories.txt");
    ASSERT_EQ(cli("encode --latents --trajectories " + traj + " --out-dir " + p("enc1")).code, 0);
    ASSERT_EQ(cli("encode --latents --trajectories " + traj + " --out-dir " + p("enc2")).code, 0);
    const auto a = json_file("enc1/manifest.json"), b = json_file("enc2/manifest.json");
    EXPECT_EQ(a["outputs"], b["outputs"]);
    EXPECT_GE(a["outputs"].size(), 2u * 17u);
    EXPECT_EQ(a["inputs"][0]["sha256"], b["inputs"][0]["sha256"]);
    ASSERT_EQ(cli("replay --manifest " + p("enc1/manifest.json") + " --out-dir " + p("enc3")).code, 0);
}

TEST_F(Cli, ExistingOutputNeedsForce) {
    const auto traj = p("scene/trajectories.txt");
    ASSERT_EQ(cli("sparsify --p-s 0.5 --p-t 0.5 --seed 3 --trajectories " + traj + " --out-dir " + p("sp")).code, 0);
    EXPECT_EQ(cli("sparsify --p-s 0.5 --trajectories " + traj + " --out-dir " + p("sp")).code, 4);
    EXPECT_EQ(cli("sparsify --p-s 0.5 --force --trajectories " + traj + " --out-dir " + p("sp")).code, 0);
}

TEST_F(Cli, JitterAndSparsifyRunAndReplay) {
    const auto traj = p("scene/trajectories.txt");
    ASSERT_EQ(cli("jitter --mode resize_crop --crop random --scale 1.3 --seed 9 --trajectories " + traj + " --out-dir " + p("jit")).code, 0);
    ASSERT_EQ(cli("replay --manifest " + p("jit/manifest.json") + " --out-dir " + p("jit_again")).code, 0);
    EXPECT_EQ(slurp(kRoot / "jit/trajectories.txt"), slurp(kRoot / "jit_again/trajectories.txt"));
}

TEST_F(Cli, MetricsIdentityAndDisjointIds) {
    const auto traj = p("scene/trajectories.txt");
    ASSERT_EQ(cli("metrics --generated " + traj + " --source " + traj + " --out-dir " + p("met")).code, 0);
    const auto rep = json_file("met/report.json");
    EXPECT_EQ(rep["traj_err"], 0.0);
    EXPECT_EQ(rep["traj_sim"], 1.0);
    EXPECT_TRUE(schema_valid("report.schema.json", "met/report.json"));

    std::ofstream(kRoot / "a.txt") << "flextraj-trajectories 1\n1 2 48 64\ntrack 1 seg 1 color none\n0 1 1 1 1\n1 2 1 1 1\n";
    std::ofstream(kRoot / "b.txt") << "flextraj-trajectories 1\n1 2 48 64\ntrack 2 seg 1 color none\n0 1 1 1 1\n1 2 1 1 1\n";
    const auto r = cli("metrics --generated " + p("a.txt") + " --source " + p("b.txt") + " --out-dir " + p("met_bad"));
    EXPECT_EQ(r.code, 6) << r.err;
    EXPECT_NE(r.err.find("no matchable pairs"), std::string::npos);
    EXPECT_FALSE(fs::exists(kRoot / "met_bad"));
}

TEST_F(Cli, DistinctExitCodes) {
    EXPECT_EQ(cli("encode --trajectories " + p("missing.txt") + " --out-dir " + p("e1")).code, 4);
    std::ofstream(kRoot / "bad.cfg") << "flextraj-config 1\nnot a key value line\n";
    EXPECT_EQ(cli("train --config " + p("bad.cfg") + " --out-dir " + p("e2")).code, 3);
    std::ofstream(kRoot / "typo.cfg") << "flextraj-config 1\ntrain.stage_stepz = 1 2 3 4\n";
    EXPECT_EQ(cli("train --config " + p("typo.cfg") + " --out-dir " + p("e3")).code, 3);
    std::ofstream(kRoot / "neg.cfg") << "flextraj-config 1\ntrain.stage_steps = 1 0 3 4\n";
    EXPECT_EQ(cli("train --config " + p("neg.cfg") + " --out-dir " + p("e4")).code, 5);
    for (const char* d : {"e1", "e2", "e3", "e4"}) EXPECT_FALSE(fs::exists(kRoot / d)) << d;
}

TEST_F(Cli, SmokePipelineEmitsFourFamiliesAndResumes) {
    const std::string cfg = std::string(FLEXTRAJ_SOURCE_DIR) + "/configs/smoke.cfg";
    ASSERT_EQ(cli("pipeline --config " + cfg + " --work-dir " + p("work") + " --out-dir " + p("pipe")).code, 0);
    const auto rep = json_file("pipe/report.json");
    EXPECT_TRUE(schema_valid("report.schema.json", "pipe/report.json"));
    EXPECT_TRUE(schema_valid("manifest.schema.json", "pipe/manifest.json"));
    for (const auto& arm : rep["arms"]) {
        for (const char* fam : {"dense", "spatially_sparse", "temporally_sparse", "unaligned"}) {
            EXPECT_TRUE(arm["families"].contains(fam)) << fam;
            EXPECT_EQ(arm["families"][fam]["cases"], 2);
        }
    }
    EXPECT_TRUE(fs::exists(kRoot / "pipe/table.txt"));

    // Lose the last checkpoints, resume, and land on the same step count and report.
    fs::remove(kRoot / "work/conditioned/checkpoints/step-00000050.ckpt");
    fs::remove(kRoot / "work/conditioned/checkpoints/step-00000038.ckpt");
    fs::remove(kRoot / "work/unconditioned.ckpt");
    ASSERT_EQ(cli("pipeline --resume --config " + cfg + " --work-dir " + p("work") + " --out-dir " + p("pipe2")).code, 0);
    std::ifstream log(kRoot / "work/conditioned/train_log.jsonl");
    std::string line;
    long long steps = 0, last = -1;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("event")) continue;
        ++steps;
        last = j["step"];
    }
    EXPECT_EQ(steps, 50);
    EXPECT_EQ(last, 49);
    EXPECT_EQ(slurp(kRoot / "pipe/report.json"), slurp(kRoot / "pipe2/report.json"));

    ASSERT_EQ(cli("replay --manifest " + p("pipe/manifest.json") + " --out-dir " + p("pipe3")).code, 0);
}
