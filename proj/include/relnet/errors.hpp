#pragma once

#include <stdexcept>
#include <string>

namespace relnet {

// Invalid configuration, shape mismatch, violated precondition. CLI exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File not found, parse failure, write failure. CLI exit code 3.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace relnet
