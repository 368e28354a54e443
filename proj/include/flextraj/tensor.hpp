// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "flextraj/error.hpp"

namespace flextraj {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
constexpr std::string_view dtype_name() {
    if constexpr (std::is_same_v<T, float>) {
        return "f32";
    } else {
        static_assert(std::is_same_v<T, double>, "only f32/f64 tensors are supported");
        return "f64";
    }
}

template <typename To, typename From>
Mat<To> cast(const Mat<From>& m) {
    return m.template cast<To>();
}

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorKind::parse, "unexpected end of binary data");
    return v;
}

}  // namespace detail

}  // namespace flextraj
