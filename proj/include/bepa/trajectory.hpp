#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bepa/policy.hpp"

namespace bepa {

// Where a rollout-group slot came from.
enum class SlotProvenance { OnPolicy, Cached, OffPolicyExpert };

struct TrajStep {
  policy::Context ctx;
  env::ActionToken action;
  // Log-probability of the action under the policy that produced (or, for
  // foreign traces, scored) this step.
  double logprob = 0.0;
  double entropy = 0.0;
};

struct Trajectory {
  std::string task_id;
  std::vector<TrajStep> steps;
  double reward = 0.0;
  SlotProvenance provenance = SlotProvenance::OnPolicy;
  bool error_flag = false;
  std::uint64_t env_seed = 0;

  // Mean per-step log-probability; 0 for an empty trajectory.
  double mean_logprob() const;
};

const char* provenance_name(SlotProvenance p);
SlotProvenance parse_provenance(const std::string& name);

}  // namespace bepa
