#pragma once

#include <stdexcept>
#include <string>

namespace kernleak {

// Malformed input document (bad JSON, bad CSV row, ...).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally well-formed input that violates a semantic contract
// (cycle, dangling id, illegal attribute, shape mismatch, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem problem (unreadable input, unwritable output directory).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace kernleak
