// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flextraj {

enum class ErrorKind {
    invalid_argument,
    shape,
    parse,
    io,
    projection,
    encoding,
    undefined_metric,
    numerical,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::shape: return "shape";
        case ErrorKind::parse: return "parse";
        case ErrorKind::io: return "io";
        case ErrorKind::projection: return "projection";
        case ErrorKind::encoding: return "encoding";
        case ErrorKind::undefined_metric: return "undefined_metric";
        case ErrorKind::numerical: return "numerical";
    }
    return "unknown";
}

/// Library-wide exception. The kind lets the CLI map failures onto exit codes.
class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

}  // namespace flextraj
