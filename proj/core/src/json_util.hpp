#pragma once

// Internal JSON (de)serialization helpers shared by plan persistence and the
// study-spec parser. Not installed; public headers stay json-free.

#include <json.hpp>

#include "stagemerge/hpseq.hpp"
#include "stagemerge/rational.hpp"

namespace stagemerge::detail {

using json = nlohmann::ordered_json;

// Numbers may be written as JSON numbers or as strings; both recover the
// exact decimal the user typed.
inline Rational rational_from_json(const json& j, const std::string& where) {
    if (j.is_string()) return Rational::from_string(j.get<std::string>());
    if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
    if (j.is_number_float()) return Rational::from_double(j.get<double>());
    throw ConfigError(where + ": expected a number or numeric string");
}

inline json rational_to_json(const Rational& r) {
    if (r.is_integer()) return json(r.num());
    return json(r.to_string());
}

inline json function_to_json(const HpFunction& f) {
    json j;
    j["family"] = family_name(f.family);
    for (const auto& [name, value] : f.params) j[name] = rational_to_json(value);
    for (const auto& [name, values] : f.lists) {
        json arr = json::array();
        for (const auto& v : values) arr.push_back(rational_to_json(v));
        j[name] = arr;
    }
    if (f.inner) j["inner"] = function_to_json(*f.inner);
    return j;
}

// steps_per_iteration scales {"epochs": n} wrappers into steps; list-valued
// step parameters accept {"epochs": [..]} as well.
HpFunction function_from_json(const json& j, const std::string& where,
                              StepCount steps_per_iteration);

inline json desc_to_json(const CanonDesc& d) {
    json j;
    if (d.is_const) {
        j["kind"] = "const";
        j["value"] = rational_to_json(d.value);
    } else {
        j["kind"] = "atom";
        j["function"] = function_to_json(d.atom);
        j["local"] = d.local;
    }
    return j;
}

inline CanonDesc desc_from_json(const json& j) {
    CanonDesc d;
    if (j.at("kind") == "const") {
        d.is_const = true;
        d.value = rational_from_json(j.at("value"), "desc.value");
    } else {
        d.is_const = false;
        d.atom = function_from_json(j.at("function"), "desc.function", 1);
        d.local = j.at("local").get<StepCount>();
    }
    return d;
}

}  // namespace stagemerge::detail
