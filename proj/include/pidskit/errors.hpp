#pragma once

#include <stdexcept>
#include <string>

namespace pidskit {

// Configuration problems: bad YAML, unknown override paths, schema violations.
// The CLI maps these to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data (event logs, label files, cached artifacts).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Pipeline-level failures: cache I/O, inconsistent stage outputs, training aborts.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pidskit
