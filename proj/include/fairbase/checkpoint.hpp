#pragma once

#include <filesystem>

#include "fairbase/model.hpp"

namespace fairbase::model {

struct Checkpoint {
  ModelSpec spec;
  ModelParams params;
  OptimizerState optimizer;  // carries step_count
};

// Versioned JSON checkpoint, written atomically (write-then-rename).
// Parameter values round-trip exactly.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairbase::model
