// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flextraj/error.hpp"
#include "flextraj/io/atomic_file.hpp"

namespace flextraj::cli {

namespace fs = std::filesystem;

inline constexpr int kManifestSchemaVersion = 1;

/// Process exit codes. Stable across versions; documented in the README.
enum ExitCode : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,           // unknown subcommand, bad flags
    exit_parse = 3,           // malformed config or input file
    exit_io = 4,              // missing file, unwritable output
    exit_invalid_input = 5,   // input parses but violates a precondition
    exit_undefined_metric = 6,
    exit_numerical = 7,       // non-finite loss
    exit_replay_mismatch = 8,
};

inline int exit_code_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::parse: return exit_parse;
        case ErrorKind::io: return exit_io;
        case ErrorKind::undefined_metric: return exit_undefined_metric;
        case ErrorKind::numerical: return exit_numerical;
        case ErrorKind::invalid_argument:
        case ErrorKind::shape:
        case ErrorKind::projection:
        case ErrorKind::encoding: return exit_invalid_input;
    }
    return exit_internal;
}

inline std::string to_hex(const unsigned char* p, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        out += digits[p[i] >> 4];
        out += digits[p[i] & 15];
    }
    return out;
}

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
   public:
    Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw Error(ErrorKind::io, "cannot initialize SHA-256");
        }
    }
    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
        return to_hex(md.data(), len);
    }

   private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_text(const std::string& s) {
    Sha256 h;
    h.update(s.data(), s.size());
    return h.hex();
}

inline std::string sha256_file(const fs::path& path) {
    auto in = open_input(path);
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

/// Every regular file under `dir`, as sorted relative paths with their hashes.
inline nlohmann::json hash_tree(const fs::path& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir).generic_string());
    }
    std::sort(files.begin(), files.end());
    nlohmann::json out = nlohmann::json::array();
    for (const auto& f : files) out.push_back({{"path", f}, {"sha256", sha256_file(dir / f)}});
    return out;
}

/// What one invocation did: enough to rerun it and to check the rerun.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;  // full argument list after the program name
    std::string config_hash;        // hash of the effective configuration
    nlohmann::json seeds = nlohmann::json::object();
    nlohmann::json inputs = nlohmann::json::array();
    nlohmann::json outputs = nlohmann::json::array();
    std::string tool_version;
    double duration_seconds = 0.0;
};

inline nlohmann::json to_json(const RunManifest& m) {
    return {{"schema_version", kManifestSchemaVersion},
            {"command", m.command},
            {"args", m.args},
            {"config_hash", m.config_hash},
            {"seeds", m.seeds},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"tool_version", m.tool_version},
            {"duration_seconds", m.duration_seconds}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != kManifestSchemaVersion) {
            throw Error(ErrorKind::parse, "unsupported manifest schema version");
        }
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.args = j.at("args").get<std::vector<std::string>>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seeds = j.at("seeds");
        m.inputs = j.at("inputs");
        m.outputs = j.at("outputs");
        m.tool_version = j.at("tool_version").get<std::string>();
        m.duration_seconds = j.at("duration_seconds").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed manifest: ") + e.what());
    }
}

/// Output directory written through a sibling staging directory. Commit
/// renames it into place; destruction without commit removes it, so the
/// target is either complete or untouched.
class StagedDir {
   public:
    StagedDir(fs::path target, bool replace) : target_(std::move(target)), replace_(replace) {
        if (target_.empty()) throw Error(ErrorKind::invalid_argument, "an output directory is required");
        if (fs::exists(target_) && !fs::is_empty(target_) && !replace_) {
            throw Error(ErrorKind::io, "output directory " + target_.string() + " exists and is not empty (use --force)");
        }
        auto parent = fs::absolute(target_).parent_path();
        std::error_code ec;
        fs::create_directories(parent, ec);
        if (ec) throw Error(ErrorKind::io, "cannot create " + parent.string() + ": " + ec.message());
        staging_ = parent / ("." + fs::absolute(target_).filename().string() + ".staging");
        fs::remove_all(staging_);
        fs::create_directories(staging_, ec);
        if (ec) throw Error(ErrorKind::io, "cannot create staging directory: " + ec.message());
    }
    StagedDir(const StagedDir&) = delete;
    StagedDir& operator=(const StagedDir&) = delete;
    ~StagedDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    const fs::path& path() const { return staging_; }
    const fs::path& target() const { return target_; }

    void commit() {
        std::error_code ec;
        if (fs::exists(target_)) fs::remove_all(target_, ec);
        if (ec) throw Error(ErrorKind::io, "cannot replace " + target_.string() + ": " + ec.message());
        fs::rename(staging_, target_, ec);
        if (ec) throw Error(ErrorKind::io, "cannot move outputs into " + target_.string() + ": " + ec.message());
        committed_ = true;
    }

   private:
    fs::path target_;
    bool replace_;
    fs::path staging_;
    bool committed_ = false;
};

}  // namespace flextraj::cli
