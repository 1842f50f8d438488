#pragma once

#include <string>

#include "dualdetr/model.hpp"

namespace dualdetr {

// Checkpoint container, all little-endian:
//   8 bytes  magic "DDTRCKPT"
//   u32      version (1)
//   u32      config byte count, then the config echo text
//   u32      parameter count
//   per parameter:
//     u32    name byte count, then the name
//     u32    rank, then u32 dims[rank]
//     f32    values (row-major)
void save_checkpoint(const std::string& path, const ParamRegistry& params,
                     const std::string& config_echo);

// Overrides parameter values with an externally supplied flat list (used for
// the EMA weights).
void save_checkpoint_with_values(const std::string& path, const ParamRegistry& params,
                                 const std::vector<std::vector<double>>& values,
                                 const std::string& config_echo);

struct LoadedCheckpoint {
    std::string config_echo;
    std::vector<std::string> names;
    std::vector<std::vector<int>> shapes;
    std::vector<std::vector<double>> values;
};
LoadedCheckpoint read_checkpoint(const std::string& path);

// Copies values into the model, failing with the offending parameter name on
// any shape disagreement or missing/unknown entry.
void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamRegistry& params);

}  // namespace dualdetr
