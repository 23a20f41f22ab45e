#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace stagemerge {

using StepCount = std::int64_t;
using NodeId = std::int64_t;
using RequestId = std::int64_t;
using StudyId = std::int32_t;
using TrialId = std::int32_t;
using TimeUs = std::int64_t;

// A named scalar observation set produced by one evaluation (e.g. acc, loss).
using MetricRecord = std::map<std::string, double>;

// Opaque handle naming a saved model state.
using CkptHandle = std::string;

// Trial identity within a run: (study index, trial index within the study).
struct TrialRef {
    StudyId study = 0;
    TrialId trial = 0;

    friend auto operator<=>(const TrialRef&, const TrialRef&) = default;
};

// User-facing validation problem: malformed spec, bad parameters, mismatched
// inputs. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Broken internal invariant (e.g. scheduler asked to resume from a missing
// checkpoint). The CLI maps this to exit code 2.
class IntegrityError : public std::logic_error {
public:
    explicit IntegrityError(const std::string& what) : std::logic_error(what) {}
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

}  // namespace stagemerge
