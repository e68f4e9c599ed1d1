// Copyright 2026 The Splitformer C++ Authors
// Error types shared across the library.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace splitformer {

// printf-style formatting into std::string.
inline std::string strformat(const char* fmt, ...) {
    va_list args1;
    va_start(args1, fmt);
    va_list args2;
    va_copy(args2, args1);
    int n = std::vsnprintf(nullptr, 0, fmt, args1);
    va_end(args1);
    std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
    if (n > 0) {
        std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
    }
    va_end(args2);
    return out;
}

// Tensor shapes do not conform to an op signature.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format / manifest / corpus problems.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (training aborts).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace splitformer
