#include "stagemerge/hpseq.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace stagemerge {

namespace {

const std::map<std::string, HpFamily>& family_table() {
    static const std::map<std::string, HpFamily> table = {
        {"constant", HpFamily::kConstant},
        {"step", HpFamily::kStep},
        {"exponential", HpFamily::kExponential},
        {"linear", HpFamily::kLinear},
        {"cosine_restarts", HpFamily::kCosineRestarts},
        {"cyclic", HpFamily::kCyclic},
        {"warmup", HpFamily::kWarmupPrefix},
    };
    return table;
}

StepCount to_step(const Rational& r, const std::string& what) {
    if (!r.is_integer()) throw ConfigError(what + " must be an integer step count, got " + r.to_string());
    return r.num();
}

void require_params(const HpFunction& f, const std::set<std::string>& required,
                    const std::set<std::string>& optional,
                    const std::set<std::string>& required_lists,
                    const std::set<std::string>& optional_lists) {
    for (const auto& name : required) {
        if (!f.params.count(name))
            throw ConfigError(family_name(f.family) + ": missing parameter '" + name + "'");
    }
    for (const auto& [name, _] : f.params) {
        if (!required.count(name) && !optional.count(name))
            throw ConfigError(family_name(f.family) + ": unknown parameter '" + name + "'");
    }
    for (const auto& name : required_lists) {
        if (!f.lists.count(name))
            throw ConfigError(family_name(f.family) + ": missing list parameter '" + name + "'");
    }
    for (const auto& [name, _] : f.lists) {
        if (!required_lists.count(name) && !optional_lists.count(name))
            throw ConfigError(family_name(f.family) + ": unknown list parameter '" + name + "'");
    }
}

void check_milestones(const std::vector<Rational>& milestones) {
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        StepCount m = to_step(milestones[i], "milestone");
        if (m < 0) throw ConfigError("milestones must be non-negative");
        if (i > 0 && milestones[i] <= milestones[i - 1])
            throw ConfigError("milestones must be strictly increasing");
    }
}

// STEP accepts either explicit run values or (initial, gamma) decay.
std::vector<Rational> step_values(const HpFunction& f) {
    const auto& milestones = f.list("milestones");
    if (f.lists.count("values")) {
        const auto& values = f.lists.at("values");
        if (values.size() != milestones.size() + 1)
            throw ConfigError("step: 'values' must have one more entry than 'milestones'");
        return values;
    }
    std::vector<Rational> values;
    values.reserve(milestones.size() + 1);
    Rational v = f.param("initial");
    const Rational& gamma = f.param("gamma");
    for (std::size_t i = 0; i <= milestones.size(); ++i) {
        values.push_back(v);
        v = v * gamma;
    }
    return values;
}

HpFunction bare_ramp(const HpFunction& warmup) {
    HpFunction ramp;
    ramp.family = HpFamily::kWarmupPrefix;
    ramp.params["duration"] = warmup.param("duration");
    ramp.params["target"] = warmup.param("target");
    return ramp;
}

double ramp_value(const HpFunction& f, StepCount t) {
    StepCount duration = to_step(f.param("duration"), "warmup duration");
    return (f.param("target") * Rational(t + 1, duration)).to_double();
}

void expand_segment(const HpFunction& f, StepCount local_start, StepCount duration,
                    StepCount trial_start, std::vector<CanonSegment>& out) {
    if (duration <= 0) return;
    auto emit_const = [&](const Rational& value, StepCount start, StepCount len) {
        if (len <= 0) return;
        CanonSegment seg;
        seg.desc.is_const = true;
        seg.desc.value = value;
        seg.start = start;
        seg.duration = len;
        out.push_back(std::move(seg));
    };
    auto emit_atom = [&](const HpFunction& atom, StepCount local, StepCount start, StepCount len) {
        if (len <= 0) return;
        CanonSegment seg;
        seg.desc.is_const = false;
        seg.desc.atom = atom;
        seg.desc.local = local;
        seg.start = start;
        seg.duration = len;
        out.push_back(std::move(seg));
    };

    switch (f.family) {
        case HpFamily::kConstant:
            emit_const(f.param("value"), trial_start, duration);
            return;
        case HpFamily::kStep: {
            const auto values = step_values(f);
            const auto& milestones = f.list("milestones");
            StepCount lo = local_start;
            StepCount hi = local_start + duration;
            for (std::size_t i = 0; i < values.size(); ++i) {
                StepCount run_lo = i == 0 ? 0 : to_step(milestones[i - 1], "milestone");
                StepCount run_hi = i == milestones.size()
                                       ? hi
                                       : to_step(milestones[i], "milestone");
                StepCount a = std::max(lo, run_lo);
                StepCount b = std::min(hi, run_hi);
                if (a < b) emit_const(values[i], trial_start + (a - lo), b - a);
            }
            return;
        }
        case HpFamily::kExponential:
        case HpFamily::kCosineRestarts:
        case HpFamily::kCyclic:
            emit_atom(f, local_start, trial_start, duration);
            return;
        case HpFamily::kLinear: {
            StepCount total = to_step(f.param("total"), "linear total");
            Rational final = f.param_or("final", Rational(0));
            StepCount atom_len = std::max<StepCount>(0, std::min(duration, total - local_start));
            emit_atom(f, local_start, trial_start, atom_len);
            emit_const(final, trial_start + atom_len, duration - atom_len);
            return;
        }
        case HpFamily::kWarmupPrefix: {
            StepCount ramp_len_total = to_step(f.param("duration"), "warmup duration");
            StepCount ramp_len = std::max<StepCount>(0, std::min(duration, ramp_len_total - local_start));
            emit_atom(bare_ramp(f), local_start, trial_start, ramp_len);
            StepCount rest = duration - ramp_len;
            if (rest > 0) {
                if (!f.inner)
                    throw ConfigError("warmup ramp evaluated past its duration");
                StepCount inner_local = local_start + ramp_len - ramp_len_total;
                expand_segment(*f.inner, inner_local, rest, trial_start + ramp_len, out);
            }
            return;
        }
    }
    throw ConfigError("unknown hyper-parameter function family");
}

std::vector<CanonSegment> merge_adjacent(std::vector<CanonSegment> segs) {
    std::vector<CanonSegment> out;
    for (auto& seg : segs) {
        if (!out.empty()) {
            CanonSegment& prev = out.back();
            bool joinable = false;
            if (prev.desc.is_const && seg.desc.is_const) {
                joinable = prev.desc.value == seg.desc.value;
            } else if (!prev.desc.is_const && !seg.desc.is_const) {
                joinable = prev.desc.atom == seg.desc.atom &&
                           seg.desc.local == prev.desc.local + prev.duration;
            }
            if (joinable) {
                prev.duration += seg.duration;
                continue;
            }
        }
        out.push_back(std::move(seg));
    }
    return out;
}

}  // namespace

std::string family_name(HpFamily f) {
    for (const auto& [name, fam] : family_table())
        if (fam == f) return name;
    return "unknown";
}

HpFamily family_from_name(const std::string& name) {
    auto it = family_table().find(name);
    if (it == family_table().end()) {
        std::string supported;
        for (const auto& [n, _] : family_table()) {
            if (!supported.empty()) supported += ", ";
            supported += n;
        }
        throw ConfigError("unknown function family '" + name + "' (supported: " + supported + ")");
    }
    return it->second;
}

const Rational& HpFunction::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
        throw ConfigError(family_name(family) + ": missing parameter '" + name + "'");
    return it->second;
}

Rational HpFunction::param_or(const std::string& name, const Rational& fallback) const {
    auto it = params.find(name);
    return it == params.end() ? fallback : it->second;
}

const std::vector<Rational>& HpFunction::list(const std::string& name) const {
    auto it = lists.find(name);
    if (it == lists.end())
        throw ConfigError(family_name(family) + ": missing list parameter '" + name + "'");
    return it->second;
}

bool HpFunction::operator==(const HpFunction& other) const {
    if (family != other.family || params != other.params || lists != other.lists) return false;
    if (!inner && !other.inner) return true;
    if (!inner || !other.inner) return false;
    return *inner == *other.inner;
}

std::string HpFunction::to_string() const {
    std::ostringstream os;
    os << family_name(family) << "(";
    bool first = true;
    for (const auto& [name, value] : params) {
        if (!first) os << ",";
        first = false;
        os << name << "=" << value.to_string();
    }
    for (const auto& [name, values] : lists) {
        if (!first) os << ",";
        first = false;
        os << name << "=[";
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) os << ",";
            os << values[i].to_string();
        }
        os << "]";
    }
    if (inner) {
        if (!first) os << ",";
        os << "inner=" << inner->to_string();
    }
    os << ")";
    return os.str();
}

void validate_function(const HpFunction& f) {
    switch (f.family) {
        case HpFamily::kConstant:
            require_params(f, {"value"}, {}, {}, {});
            return;
        case HpFamily::kStep: {
            if (f.lists.count("values")) {
                require_params(f, {}, {}, {"milestones", "values"}, {});
            } else {
                require_params(f, {"initial", "gamma"}, {}, {"milestones"}, {});
                if (f.param("gamma") <= Rational(0)) throw ConfigError("step: gamma must be > 0");
            }
            check_milestones(f.list("milestones"));
            step_values(f);
            return;
        }
        case HpFamily::kExponential:
            require_params(f, {"initial", "gamma"}, {}, {}, {});
            if (f.param("gamma") <= Rational(0)) throw ConfigError("exponential: gamma must be > 0");
            return;
        case HpFamily::kLinear:
            require_params(f, {"initial", "total"}, {"final"}, {}, {});
            if (to_step(f.param("total"), "linear total") < 1)
                throw ConfigError("linear: total must be >= 1");
            return;
        case HpFamily::kCosineRestarts: {
            require_params(f, {"initial", "t0"}, {"t_mult", "eta_min"}, {}, {});
            if (to_step(f.param("t0"), "cosine t0") < 1)
                throw ConfigError("cosine_restarts: t0 must be >= 1");
            if (to_step(f.param_or("t_mult", Rational(1)), "cosine t_mult") < 1)
                throw ConfigError("cosine_restarts: t_mult must be >= 1");
            return;
        }
        case HpFamily::kCyclic: {
            require_params(f, {"base", "max", "step_size_up"}, {"step_size_down"}, {}, {});
            StepCount up = to_step(f.param("step_size_up"), "cyclic step_size_up");
            StepCount down = to_step(f.param_or("step_size_down", f.param("step_size_up")),
                                     "cyclic step_size_down");
            if (up < 1 || down < 1) throw ConfigError("cyclic: period halves must be >= 1");
            return;
        }
        case HpFamily::kWarmupPrefix: {
            require_params(f, {"duration", "target"}, {}, {}, {});
            if (to_step(f.param("duration"), "warmup duration") < 1)
                throw ConfigError("warmup: duration must be >= 1");
            if (f.inner) validate_function(*f.inner);
            return;
        }
    }
    throw ConfigError("unknown hyper-parameter function family");
}

double value_at(const HpFunction& f, StepCount local_step) {
    if (local_step < 0) throw ConfigError("value_at: negative step");
    switch (f.family) {
        case HpFamily::kConstant:
            return f.param("value").to_double();
        case HpFamily::kStep: {
            const auto values = step_values(f);
            const auto& milestones = f.list("milestones");
            std::size_t idx = 0;
            while (idx < milestones.size() && Rational(local_step) >= milestones[idx]) ++idx;
            return values[idx].to_double();
        }
        case HpFamily::kExponential:
            return f.param("initial").to_double() *
                   std::pow(f.param("gamma").to_double(), static_cast<double>(local_step));
        case HpFamily::kLinear: {
            StepCount total = to_step(f.param("total"), "linear total");
            Rational final = f.param_or("final", Rational(0));
            if (local_step >= total) return final.to_double();
            const Rational& initial = f.param("initial");
            return (initial + (final - initial) * Rational(local_step, total)).to_double();
        }
        case HpFamily::kCosineRestarts: {
            StepCount t0 = to_step(f.param("t0"), "cosine t0");
            StepCount mult = to_step(f.param_or("t_mult", Rational(1)), "cosine t_mult");
            double initial = f.param("initial").to_double();
            double eta_min = f.param_or("eta_min", Rational(0)).to_double();
            StepCount period = t0;
            StepCount t = local_step;
            while (t >= period) {
                t -= period;
                period *= mult;
                if (period <= 0) throw ConfigError("cosine_restarts: period overflow");
            }
            double frac = static_cast<double>(t) / static_cast<double>(period);
            return eta_min + (initial - eta_min) * 0.5 * (1.0 + std::cos(M_PI * frac));
        }
        case HpFamily::kCyclic: {
            StepCount up = to_step(f.param("step_size_up"), "cyclic step_size_up");
            StepCount down = to_step(f.param_or("step_size_down", f.param("step_size_up")),
                                     "cyclic step_size_down");
            StepCount pos = local_step % (up + down);
            const Rational& base = f.param("base");
            const Rational& peak = f.param("max");
            if (pos < up) return (base + (peak - base) * Rational(pos, up)).to_double();
            return (peak - (peak - base) * Rational(pos - up, down)).to_double();
        }
        case HpFamily::kWarmupPrefix: {
            StepCount duration = to_step(f.param("duration"), "warmup duration");
            if (local_step < duration) return ramp_value(f, local_step);
            if (!f.inner) throw ConfigError("warmup ramp evaluated past its duration");
            return value_at(*f.inner, local_step - duration);
        }
    }
    throw ConfigError("unknown hyper-parameter function family");
}

StepCount HpSequence::length() const {
    StepCount n = 0;
    for (const auto& seg : segments) n += seg.duration;
    return n;
}

HpSequence make_sequence(const std::string& hp_name, const HpFunction& f, StepCount total_steps) {
    if (total_steps < 1) throw ConfigError("sequence length must be >= 1");
    validate_function(f);
    HpSequence seq;
    seq.hp_name = hp_name;
    seq.segments.push_back(Segment{f, 0, total_steps});
    return seq;
}

double sequence_value_at(const HpSequence& seq, StepCount step) {
    StepCount pos = 0;
    for (const auto& seg : seq.segments) {
        if (step < pos + seg.duration)
            return value_at(seg.function, seg.local_start + (step - pos));
        pos += seg.duration;
    }
    throw std::out_of_range("sequence_value_at: step " + std::to_string(step) + " beyond length");
}

bool CanonDesc::operator==(const CanonDesc& other) const {
    if (is_const != other.is_const) return false;
    if (is_const) return value == other.value;
    return local == other.local && atom == other.atom;
}

bool CanonDesc::operator<(const CanonDesc& other) const {
    if (is_const != other.is_const) return is_const;  // runs sort before atoms
    if (is_const) return value < other.value;
    auto lhs = atom.to_string();
    auto rhs = other.atom.to_string();
    if (lhs != rhs) return lhs < rhs;
    return local < other.local;
}

std::string CanonDesc::to_string() const {
    if (is_const) return "constant(value=" + value.to_string() + ")@0";
    return atom.to_string() + "@" + std::to_string(local);
}

std::uint64_t CanonDesc::hash() const {
    return fnv1a64(to_string());
}

std::vector<CanonSegment> canonical_segments(const HpSequence& seq) {
    std::vector<CanonSegment> out;
    StepCount pos = 0;
    for (const auto& seg : seq.segments) {
        expand_segment(seg.function, seg.local_start, seg.duration, pos, out);
        pos += seg.duration;
    }
    return merge_adjacent(std::move(out));
}

HpSequence canonicalize(const HpSequence& seq) {
    HpSequence out;
    out.hp_name = seq.hp_name;
    for (const auto& seg : canonical_segments(seq)) {
        Segment s;
        if (seg.desc.is_const) {
            s.function.family = HpFamily::kConstant;
            s.function.params["value"] = seg.desc.value;
            s.local_start = 0;
        } else {
            s.function = seg.desc.atom;
            s.local_start = seg.desc.local;
        }
        s.duration = seg.duration;
        out.segments.push_back(std::move(s));
    }
    return out;
}

CanonDesc descriptor_at(const std::vector<CanonSegment>& canon, StepCount step) {
    for (const auto& seg : canon) {
        if (step >= seg.start && step < seg.start + seg.duration) {
            CanonDesc d = seg.desc;
            if (!d.is_const) d.local += step - seg.start;
            return d;
        }
    }
    throw std::out_of_range("descriptor_at: step " + std::to_string(step) + " beyond sequence");
}

std::pair<HpSequence, HpSequence> split_at(const HpSequence& seq, StepCount step) {
    StepCount total = seq.length();
    if (step <= 0 || step >= total)
        throw std::out_of_range("split_at: step " + std::to_string(step) +
                                " outside (0, " + std::to_string(total) + ")");
    HpSequence left, right;
    left.hp_name = right.hp_name = seq.hp_name;
    StepCount pos = 0;
    for (const auto& seg : seq.segments) {
        if (pos + seg.duration <= step) {
            left.segments.push_back(seg);
        } else if (pos >= step) {
            right.segments.push_back(seg);
        } else {
            StepCount head = step - pos;
            Segment a = seg, b = seg;
            a.duration = head;
            b.local_start += head;
            b.duration -= head;
            left.segments.push_back(std::move(a));
            right.segments.push_back(std::move(b));
        }
        pos += seg.duration;
    }
    return {std::move(left), std::move(right)};
}

void validate_config(const TrialConfig& config) {
    if (config.total_steps < 1) throw ConfigError("trial must have total_steps >= 1");
    if (config.sequences.empty()) throw ConfigError("trial has no hyper-parameters");
    for (const auto& [name, seq] : config.sequences) {
        if (seq.length() != config.total_steps)
            throw ConfigError("sequence for '" + name + "' covers " +
                              std::to_string(seq.length()) + " steps, expected " +
                              std::to_string(config.total_steps));
        for (const auto& seg : seq.segments) {
            validate_function(seg.function);
            if (seg.duration < 1) throw ConfigError("segment duration must be >= 1");
            if (seg.local_start < 0) throw ConfigError("segment local_start must be >= 0");
        }
    }
}

TrialConfig truncate_config(const TrialConfig& config, StepCount steps) {
    if (steps < 1 || steps > config.total_steps)
        throw std::out_of_range("truncate_config: bad step count " + std::to_string(steps));
    if (steps == config.total_steps) return config;
    TrialConfig out;
    out.total_steps = steps;
    for (const auto& [name, seq] : config.sequences) {
        HpSequence cut;
        cut.hp_name = seq.hp_name;
        StepCount pos = 0;
        for (const auto& seg : seq.segments) {
            if (pos >= steps) break;
            Segment s = seg;
            s.duration = std::min(seg.duration, steps - pos);
            cut.segments.push_back(std::move(s));
            pos += seg.duration;
        }
        out.sequences.emplace(name, std::move(cut));
    }
    return out;
}

std::vector<CombinedSegment> combined_segments(const TrialConfig& config) {
    std::map<std::string, std::vector<CanonSegment>> canon;
    std::set<StepCount> starts;
    for (const auto& [name, seq] : config.sequences) {
        auto segs = canonical_segments(seq);
        for (const auto& s : segs) starts.insert(s.start);
        canon.emplace(name, std::move(segs));
    }
    std::vector<StepCount> boundaries(starts.begin(), starts.end());
    std::vector<CombinedSegment> out;
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        CombinedSegment seg;
        seg.start = boundaries[i];
        StepCount end = i + 1 < boundaries.size() ? boundaries[i + 1] : config.total_steps;
        seg.duration = end - seg.start;
        for (const auto& [name, segs] : canon)
            seg.descs.emplace(name, descriptor_at(segs, seg.start));
        out.push_back(std::move(seg));
    }
    return out;
}

StepCount common_prefix_steps(const TrialConfig& a, const TrialConfig& b) {
    {
        auto ai = a.sequences.begin();
        auto bi = b.sequences.begin();
        for (; ai != a.sequences.end() && bi != b.sequences.end(); ++ai, ++bi)
            if (ai->first != bi->first)
                throw ConfigError("common_prefix_steps: mismatched hp sets");
        if (ai != a.sequences.end() || bi != b.sequences.end())
            throw ConfigError("common_prefix_steps: mismatched hp sets");
    }
    StepCount best = std::min(a.total_steps, b.total_steps);
    StepCount result = best;
    for (const auto& [name, seq_a] : a.sequences) {
        auto ca = canonical_segments(seq_a);
        auto cb = canonical_segments(b.sequences.at(name));
        StepCount n = 0;
        std::size_t i = 0, j = 0;
        while (n < best && i < ca.size() && j < cb.size()) {
            const CanonSegment& sa = ca[i];
            const CanonSegment& sb = cb[j];
            StepCount rem_a = sa.start + sa.duration - n;
            StepCount rem_b = sb.start + sb.duration - n;
            bool match;
            if (sa.desc.is_const != sb.desc.is_const) {
                match = false;
            } else if (sa.desc.is_const) {
                match = sa.desc.value == sb.desc.value;
            } else {
                match = sa.desc.atom == sb.desc.atom &&
                        sa.desc.local + (n - sa.start) == sb.desc.local + (n - sb.start);
            }
            if (!match) break;
            StepCount adv = std::min(rem_a, rem_b);
            n += adv;
            if (n >= sa.start + sa.duration) ++i;
            if (n >= sb.start + sb.duration) ++j;
        }
        result = std::min(result, n);
        if (result == 0) break;
    }
    return result;
}

std::uint64_t prefix_digest(const TrialConfig& config, StepCount steps) {
    if (steps < 0 || steps > config.total_steps)
        throw std::out_of_range("prefix_digest: bad step count");
    std::uint64_t h = fnv1a64("hp-prefix");
    for (const auto& seg : combined_segments(config)) {
        if (seg.start >= steps) break;
        StepCount dur = std::min(seg.duration, steps - seg.start);
        h = fnv1a64(&seg.start, sizeof seg.start, h);
        h = fnv1a64(&dur, sizeof dur, h);
        for (const auto& [name, desc] : seg.descs) {
            h = fnv1a64(name, h);
            h = fnv1a64(desc.to_string(), h);
        }
    }
    h = fnv1a64(&steps, sizeof steps, h);
    return h;
}

}  // namespace stagemerge
