#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace sentinel {

// Ground-truth label codes carried alongside events in synthetic runs.
// 0 is benign; the attack kinds start at 1.
enum class ScenarioKind : std::uint8_t {
  privilege_escalation = 1,
  lateral_movement = 2,
  service_account_compromise = 3,
};

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::privilege_escalation: return "privilege_escalation";
    case ScenarioKind::lateral_movement: return "lateral_movement";
    case ScenarioKind::service_account_compromise: return "service_account_compromise";
  }
  return "unknown";
}

inline std::optional<ScenarioKind> scenario_from_string(std::string_view s) {
  if (s == "privilege_escalation") return ScenarioKind::privilege_escalation;
  if (s == "lateral_movement") return ScenarioKind::lateral_movement;
  if (s == "service_account_compromise") return ScenarioKind::service_account_compromise;
  return std::nullopt;
}

inline std::string_view label_code_name(std::uint8_t code) {
  if (code >= 1 && code <= 3) return to_string(static_cast<ScenarioKind>(code));
  return code == 0 ? "benign" : "malicious";
}

}  // namespace sentinel
