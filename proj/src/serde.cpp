#include "bepa/serde.hpp"

#include "bepa/errors.hpp"

namespace bepa::env {

using nlohmann::json;

void to_json(json& j, const ActionToken& a) { j = a.key(); }

void from_json(const json& j, ActionToken& a) {
  a = ActionToken::parse(j.get<std::string>());
}

void to_json(json& j, const Observation& o) {
  j = json{{"screen", o.screen_id},
           {"widgets", o.widgets},
           {"settable", o.settable},
           {"popup", o.popup_active}};
}

void from_json(const json& j, Observation& o) {
  j.at("screen").get_to(o.screen_id);
  j.at("widgets").get_to(o.widgets);
  j.at("settable").get_to(o.settable);
  j.at("popup").get_to(o.popup_active);
}

}  // namespace bepa::env

namespace bepa::policy {

using nlohmann::json;

void to_json(json& j, const Context& c) {
  j = json{{"obs", c.obs},
           {"task", c.task_id},
           {"hist", c.history},
           {"plan", c.plan}};
}

void from_json(const json& j, Context& c) {
  j.at("obs").get_to(c.obs);
  j.at("task").get_to(c.task_id);
  j.at("hist").get_to(c.history);
  j.at("plan").get_to(c.plan);
}

}  // namespace bepa::policy

namespace bepa {

using nlohmann::json;

double Trajectory::mean_logprob() const {
  if (steps.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : steps) acc += s.logprob;
  return acc / static_cast<double>(steps.size());
}

const char* provenance_name(SlotProvenance p) {
  switch (p) {
    case SlotProvenance::OnPolicy:
      return "on-policy";
    case SlotProvenance::Cached:
      return "cached";
    case SlotProvenance::OffPolicyExpert:
      return "off-policy-expert";
  }
  return "?";
}

SlotProvenance parse_provenance(const std::string& name) {
  if (name == "on-policy") return SlotProvenance::OnPolicy;
  if (name == "cached") return SlotProvenance::Cached;
  if (name == "off-policy-expert") return SlotProvenance::OffPolicyExpert;
  throw IoError("unknown provenance '" + name + "'");
}

void to_json(json& j, const TrajStep& s) {
  j = json{{"ctx", s.ctx},
           {"action", s.action},
           {"logprob", s.logprob},
           {"entropy", s.entropy}};
}

void from_json(const json& j, TrajStep& s) {
  j.at("ctx").get_to(s.ctx);
  j.at("action").get_to(s.action);
  j.at("logprob").get_to(s.logprob);
  j.at("entropy").get_to(s.entropy);
}

void to_json(json& j, const Trajectory& t) {
  j = json{{"task", t.task_id},
           {"steps", t.steps},
           {"reward", t.reward},
           {"provenance", provenance_name(t.provenance)},
           {"error", t.error_flag},
           {"env_seed", t.env_seed}};
}

void from_json(const json& j, Trajectory& t) {
  j.at("task").get_to(t.task_id);
  j.at("steps").get_to(t.steps);
  j.at("reward").get_to(t.reward);
  t.provenance = parse_provenance(j.at("provenance").get<std::string>());
  j.at("error").get_to(t.error_flag);
  j.at("env_seed").get_to(t.env_seed);
}

}  // namespace bepa
