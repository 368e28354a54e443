// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flextraj/dit/model.hpp"
#include "flextraj/io/atomic_file.hpp"

namespace flextraj {

inline nlohmann::json to_json(const ScheduleParams& s) {
    return {{"steps", s.steps}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end},
            {"reference_steps", s.reference_steps}};
}

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"latent_channels", c.latent_channels}, {"width", c.width}, {"layers", c.layers},
            {"heads", c.heads}, {"ffn_mult", c.ffn_mult}, {"lora_rank", c.lora_rank}, {"dense_mask", c.dense_mask},
            {"data_std", c.data_std}, {"rotary", c.rotary},
            {"local_attention_init", c.local_attention_init}, {"timestep_balance_cap", c.timestep_balance_cap},
            {"seed", c.seed}, {"schedule", to_json(c.schedule)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.latent_channels = j.at("latent_channels").get<int>();
        c.width = j.at("width").get<int>();
        c.layers = j.at("layers").get<int>();
        c.heads = j.at("heads").get<int>();
        c.ffn_mult = j.at("ffn_mult").get<int>();
        c.lora_rank = j.at("lora_rank").get<int>();
        c.dense_mask = j.at("dense_mask").get<bool>();
        c.data_std = j.at("data_std").get<double>();
        c.rotary = j.at("rotary").get<bool>();
        c.local_attention_init = j.at("local_attention_init").get<double>();
        c.timestep_balance_cap = j.at("timestep_balance_cap").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto& s = j.at("schedule");
        c.schedule.steps = s.at("steps").get<int>();
        c.schedule.beta_start = s.at("beta_start").get<double>();
        c.schedule.beta_end = s.at("beta_end").get<double>();
        c.schedule.reference_steps = s.at("reference_steps").get<int>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("model config: ") + e.what());
    }
}

/// Model weights plus optional named side tensors (optimizer moments) and free
/// metadata (training step, seed lineage, curriculum state).
template <typename T>
struct Checkpoint {
    ModelConfig config;
    ModelParams<T> params;
    std::map<std::string, Mat<T>> extra;
    nlohmann::json meta = nlohmann::json::object();
};

inline constexpr char kCheckpointMagic[4] = {'F', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic, version, manifest byte length, JSON manifest, then every
/// tensor's row-major data in manifest order.
template <typename T>
void write_checkpoint(std::ostream& out, const Checkpoint<T>& ck) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<const Mat<T>*> order;
    std::uint64_t offset = 0;
    auto add = [&](const std::string& name, const Mat<T>& m, std::string_view group) {
        tensors.push_back({{"name", name}, {"group", group}, {"rows", m.rows()}, {"cols", m.cols()},
                           {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.size()) * sizeof(T);
        order.push_back(&m);
    };
    ck.params.visit([&](const std::string& name, const Mat<T>& m, ParamGroup g) { add(name, m, to_string(g)); });
    for (const auto& [name, m] : ck.extra) add(name, m, "extra");
    nlohmann::json manifest = {{"format", "flextraj-checkpoint"}, {"version", kCheckpointVersion},
                               {"dtype", dtype_name<T>()},      {"model", to_json(ck.config)},
                               {"tensors", tensors},            {"meta", ck.meta}};
    const std::string text = manifest.dump();
    out.write(kCheckpointMagic, 4);
    detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
    detail::write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* m : order) {
        out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(T)));
    }
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error(ErrorKind::parse, "not a checkpoint file");
    if (detail::read_pod<std::uint32_t>(in) != kCheckpointVersion) {
        throw Error(ErrorKind::parse, "unsupported checkpoint version");
    }
    const auto len = detail::read_pod<std::uint64_t>(in);
    if (len > (1ULL << 30)) throw Error(ErrorKind::parse, "checkpoint manifest too large");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error(ErrorKind::parse, "truncated checkpoint manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("checkpoint manifest: ") + e.what());
    }
    if (manifest.value("dtype", "") != dtype_name<T>()) {
        throw Error(ErrorKind::parse, "checkpoint dtype " + manifest.value("dtype", std::string("?")) +
                                          " does not match requested " + std::string(dtype_name<T>()));
    }
    Checkpoint<T> ck;
    ck.config = model_config_from_json(manifest.at("model"));
    ck.params = ConditionedDiT<T>(ck.config).params();
    ck.meta = manifest.value("meta", nlohmann::json::object());

    std::map<std::string, Mat<T>*> slots;
    ck.params.visit([&](const std::string& name, Mat<T>& m, ParamGroup) { slots[name] = &m; });
    std::size_t filled = 0;
    for (const auto& t : manifest.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        Mat<T>* dst = nullptr;
        if (t.at("group") == "extra") {
            dst = &ck.extra[name];
            dst->resize(rows, cols);
        } else {
            auto it = slots.find(name);
            if (it == slots.end()) throw Error(ErrorKind::parse, "unknown tensor " + name);
            dst = it->second;
            if (dst->rows() != rows || dst->cols() != cols) {
                throw Error(ErrorKind::parse, "tensor " + name + " shape disagrees with model config");
            }
            ++filled;
        }
        in.read(reinterpret_cast<char*>(dst->data()), static_cast<std::streamsize>(dst->size() * sizeof(T)));
        if (!in) throw Error(ErrorKind::parse, "truncated tensor data for " + name);
    }
    if (filled != slots.size()) throw Error(ErrorKind::parse, "checkpoint is missing model tensors");
    return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
    write_file_atomic(path, [&](std::ostream& out) { write_checkpoint(out, ck); });
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_checkpoint<T>(in);
}

/// Rebuilds a model from a checkpoint with its stored weights.
template <typename T>
ConditionedDiT<T> model_from_checkpoint(const Checkpoint<T>& ck) {
    ConditionedDiT<T> model(ck.config);
    model.params() = ck.params;
    return model;
}

}  // namespace flextraj
