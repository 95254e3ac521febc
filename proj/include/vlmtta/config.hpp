#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "vlmtta/episodic.hpp"
#include "vlmtta/online.hpp"
#include "vlmtta/synthetic.hpp"

namespace vlmtta {

// JSON config files. Each method reads only the groups it uses, e.g. for tpt
//   {"optim": {"steps": 3, "learning_rate": 0.02}, "loss": {"kind": "marginal_entropy"}}
// and for tda
//   {"tda": {"pos_capacity": 3, "neg_beta": 0.117}}
// Missing keys keep the method defaults. Unknown groups or keys are rejected.

/// Groups consumed by `tag`, in echo order.
std::vector<std::string> config_groups(const std::string& tag, bool online);

EpisodicConfig episodic_config_from_json(const std::string& tag, const nlohmann::json& j);
/// Every group the method uses, with all defaults expanded.
nlohmann::json episodic_config_to_json(const std::string& tag, const EpisodicConfig& cfg);

OnlineConfig online_config_from_json(const std::string& tag, const nlohmann::json& j);
nlohmann::json online_config_to_json(const std::string& tag, const OnlineConfig& cfg);

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

/// Parses a JSON file, mapping I/O and syntax problems to ValidationError.
nlohmann::json read_json_file(const std::string& path);

}  // namespace vlmtta
