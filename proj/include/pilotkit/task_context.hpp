#pragma once

#include <filesystem>
#include <string>

#include "pilotkit/core.hpp"

namespace pilotkit {

class DataService;

// What a typed unit sees while it runs inside an agent slot.
class TaskContext {
 public:
  std::string unit_id;
  std::string pilot_id;
  int attempt = 0;
  std::filesystem::path sandbox;
  AffinityLabels labels;
  DataService* data = nullptr;
  // Space that received staged inputs, empty when the unit had none.
  std::string staging_space;
};

}  // namespace pilotkit
