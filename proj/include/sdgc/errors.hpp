#pragma once

#include <stdexcept>
#include <string>

namespace sdgc {

// Error taxonomy mirrors the CLI exit codes:
//   config_error -> 2, infeasible_error -> 3, divergence_error -> 4.
// Shape/precondition violations are plain std::invalid_argument.

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

class infeasible_error : public std::runtime_error {
public:
    infeasible_error(const std::string& what, double min_achievable_s)
        : std::runtime_error(what), min_achievable_s_(min_achievable_s) {}

    double min_achievable_s() const { return min_achievable_s_; }

private:
    double min_achievable_s_;
};

class divergence_error : public std::runtime_error {
public:
    explicit divergence_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sdgc
