// The three forensic tasks and their canonical prompt strings. Every module
// that phrases or parses a task (fusion training, inference, evaluation)
// pulls the wording from here so it can never drift.

#pragma once

#include <string>

#include "dfallm/errors.hpp"

namespace dfallm {

enum class Task { Detection, Attribution, Localization };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Detection: return "detection";
    case Task::Attribution: return "attribution";
    case Task::Localization: return "localization";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  if (s == "detection") return Task::Detection;
  if (s == "attribution") return Task::Attribution;
  if (s == "localization") return Task::Localization;
  throw ConfigError("unknown task '" + s + "' (detection|attribution|localization)");
}

inline const char* task_prompt(Task t) {
  switch (t) {
    case Task::Detection: return "Is this audio fake or real?";
    case Task::Attribution: return "Identify the specific source type or the spoofed audio.";
    case Task::Localization:
      return "Identify the exact time segments in this audio that contain spoofed content.";
  }
  return "?";
}

}  // namespace dfallm
