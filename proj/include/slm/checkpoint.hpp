#pragma once

#include <string>
#include <vector>

#include "slm/model.hpp"
#include "slm/optimizer.hpp"

namespace slm {

// Model checkpoint, all little-endian:
//   "SLMP" | version u32 = 1
//   | arch u32 (0 mlp, 1 resmlp) | input_dim u32 | hidden_dim u32
//   | num_layers u32 | num_residual_blocks u32 | output_dim u32
//   | dropout_rate f32
//   | every tensor in declaration order (see BasicParams), f32 row-major
//
// Optimizer state uses the same config block:
//   "SLMO" | version u32 = 1 | <config block> | step u64
//   | first moments in declaration order | second moments in declaration order

struct ModelCheckpoint {
  ModelConfig config;
  ModelParams params;
};

std::vector<char> serialize_model(const ModelConfig& config, const ModelParams& params);
void save_model(const std::string& path, const ModelConfig& config, const ModelParams& params);
ModelCheckpoint load_model(const std::string& path);

std::vector<char> serialize_optimizer(const ModelConfig& config, const OptimizerState& state);
void save_optimizer(const std::string& path, const ModelConfig& config,
                    const OptimizerState& state);
OptimizerState load_optimizer(const std::string& path, const ModelConfig& expected_config);

}  // namespace slm
