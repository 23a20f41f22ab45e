#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stagemerge/rational.hpp"
#include "stagemerge/types.hpp"

namespace stagemerge {

// A hyper-parameter whose value is a function of the training step.
//
// CONSTANT and STEP are piecewise constant and canonicalize into maximal
// constant runs; the remaining families are continuous descriptors that are
// compared structurally (same family, same parameters, same local offset)
// and never merge across families. WARMUP_PREFIX composes a linear ramp with
// an inner function; canonicalization splits the composition apart.
enum class HpFamily {
    kConstant,
    kStep,
    kExponential,
    kLinear,
    kCosineRestarts,
    kCyclic,
    kWarmupPrefix,
};

std::string family_name(HpFamily f);
HpFamily family_from_name(const std::string& name);

struct HpFunction {
    HpFamily family = HpFamily::kConstant;
    // Scalar parameters, keyed by name (e.g. "value", "gamma", "initial").
    std::map<std::string, Rational> params;
    // List parameters ("values", "milestones"); milestones are step counts.
    std::map<std::string, std::vector<Rational>> lists;
    // Inner function for WARMUP_PREFIX compositions. A warmup with no inner
    // denotes the bare ramp; it only appears in canonical forms.
    std::shared_ptr<const HpFunction> inner;

    const Rational& param(const std::string& name) const;
    Rational param_or(const std::string& name, const Rational& fallback) const;
    const std::vector<Rational>& list(const std::string& name) const;

    bool operator==(const HpFunction& other) const;
    std::string to_string() const;  // FAMILY(k1=v1,...) without local offset
};

// Validates family-specific parameter shape and invariants.
void validate_function(const HpFunction& f);

// Evaluates f at a step local to the function's own domain.
double value_at(const HpFunction& f, StepCount local_step);

// One contiguous piece of a sequence: `function` evaluated starting at
// `local_start` of its own domain for `duration` trial steps.
struct Segment {
    HpFunction function;
    StepCount local_start = 0;
    StepCount duration = 0;
};

struct HpSequence {
    std::string hp_name;
    std::vector<Segment> segments;

    StepCount length() const;
};

HpSequence make_sequence(const std::string& hp_name, const HpFunction& f, StepCount total_steps);

// Evaluates the sequence at an absolute trial step.
double sequence_value_at(const HpSequence& seq, StepCount step);

// Canonical descriptor of a sequence position: either a constant run value
// or an atomic continuous function with the local offset it has reached.
// Two trials share a step exactly when their descriptors at that step agree.
struct CanonDesc {
    bool is_const = true;
    Rational value;       // constant runs
    HpFunction atom;      // continuous families (inner-free)
    StepCount local = 0;  // local offset of `atom` (ignored for runs)

    bool operator==(const CanonDesc& other) const;
    bool operator<(const CanonDesc& other) const;
    std::string to_string() const;  // FAMILY(k=v,...)@local
    std::uint64_t hash() const;
};

struct CanonSegment {
    CanonDesc desc;            // descriptor at `start`
    StepCount start = 0;       // absolute trial step
    StepCount duration = 0;
};

// Canonical form helpers. canonicalize() preserves pointwise values, expands
// piecewise-constant families into maximal constant runs, and leaves
// continuous families atomic.
std::vector<CanonSegment> canonical_segments(const HpSequence& seq);
HpSequence canonicalize(const HpSequence& seq);
CanonDesc descriptor_at(const std::vector<CanonSegment>& canon, StepCount step);

// Splits at an interior step; concatenation reproduces the original
// pointwise and the right part carries adjusted local offsets.
std::pair<HpSequence, HpSequence> split_at(const HpSequence& seq, StepCount step);

// One trial's full configuration: every tuned hyper-parameter as a sequence
// covering [0, total_steps).
struct TrialConfig {
    std::map<std::string, HpSequence> sequences;
    StepCount total_steps = 0;
};

void validate_config(const TrialConfig& config);
TrialConfig truncate_config(const TrialConfig& config, StepCount steps);

// Canonical combined segments: maximal intervals on which no hyper-parameter
// changes descriptor. Boundaries are where plan nodes begin.
struct CombinedSegment {
    StepCount start = 0;
    StepCount duration = 0;
    std::map<std::string, CanonDesc> descs;  // descriptor of each hp at `start`
};

std::vector<CombinedSegment> combined_segments(const TrialConfig& config);

// Largest n such that the two configurations agree pointwise on [0, n).
StepCount common_prefix_steps(const TrialConfig& a, const TrialConfig& b);

// Deterministic digest of the canonical value prefix [0, steps); equal for
// any two configurations that agree pointwise on that range.
std::uint64_t prefix_digest(const TrialConfig& config, StepCount steps);

}  // namespace stagemerge
