#pragma once

#include <stdexcept>
#include <string>

namespace mflab {

/// Shape disagreement between tensors or between a tensor and a declared width.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Argument outside its mathematical domain (t outside [0,1], sigma_t = 0, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Time arguments out of order (s > t, non-monotone step times, ...).
struct OrderingError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or violated operation contract. Mapped to exit code 2 by the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training or integration blew up. Carries the step at which it happened.
/// Mapped to exit code 3 by the CLI.
struct DivergenceError : std::runtime_error {
    long step;
    DivergenceError(const std::string& msg, long step_index)
        : std::runtime_error(msg + " (step " + std::to_string(step_index) + ")"),
          step(step_index) {}
};

/// Malformed structured input (TOML, CSV, JSON). Carries the 1-based line number.
struct ParseError : std::runtime_error {
    int line;
    ParseError(const std::string& msg, int line_number)
        : std::runtime_error(msg + " (line " + std::to_string(line_number) + ")"),
          line(line_number) {}
};

/// Stage run out of order (e.g. MFD from a checkpoint with no CMT ancestor).
struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mflab
