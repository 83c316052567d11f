#pragma once

// JSON (de)serialization for trace-level records. Kept out of the core
// headers so the math modules do not pull in the json dependency. The
// hooks live in each type's own namespace for ADL.

#include <json.hpp>

#include "bepa/trajectory.hpp"

namespace bepa::env {

void to_json(nlohmann::json& j, const ActionToken& a);
void from_json(const nlohmann::json& j, ActionToken& a);

void to_json(nlohmann::json& j, const Observation& o);
void from_json(const nlohmann::json& j, Observation& o);

}  // namespace bepa::env

namespace bepa::policy {

void to_json(nlohmann::json& j, const Context& c);
void from_json(const nlohmann::json& j, Context& c);

}  // namespace bepa::policy

namespace bepa {

void to_json(nlohmann::json& j, const TrajStep& s);
void from_json(const nlohmann::json& j, TrajStep& s);

void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);

}  // namespace bepa
