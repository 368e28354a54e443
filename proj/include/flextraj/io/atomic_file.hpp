// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <system_error>

#include "flextraj/error.hpp"

namespace flextraj {

/// Writes through a sibling temporary and renames it into place, so readers
/// see either the old file, the complete new file, or nothing.
inline void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body,
                              bool binary = true) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw Error(ErrorKind::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
        try {
            body(out);
        } catch (...) {
            out.close();
            fs::remove(tmp);
            throw;
        }
        out.flush();
        if (!out) {
            out.close();
            fs::remove(tmp);
            throw Error(ErrorKind::io, "write failed for " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error(ErrorKind::io, "cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = true) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    return in;
}

}  // namespace flextraj
