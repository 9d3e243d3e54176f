// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rkvq {

enum class ErrorKind {
    Dimension,        // d not a power of two, or unsupported
    Range,            // value outside its documented domain
    Shape,            // buffer length mismatch
    Config,           // inconsistent scheme / missing lambda / bad flag combination
    Data,             // NaN/Inf or otherwise unusable input values
    DegenerateReflector,
    Divergence,       // optimizer blew up
    UndefinedMoment,  // statistic undefined (e.g. zero-variance batch)
    Io,               // file read/write failure
    Format            // bad magic / version / truncated payload
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline int log2_exact(std::uint64_t v) {
    int b = 0;
    while ((v >> b) != 1) ++b;
    return b;
}

}  // namespace rkvq
