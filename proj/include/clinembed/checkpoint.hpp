#pragma once

#include <cstdint>
#include <string>

#include "clinembed/adam.hpp"

namespace clinembed {

// Architecture block stored in every checkpoint.
struct CheckpointConfig {
  uint32_t vocab_size = 0;
  uint32_t d_model = 0;
  uint32_t n_layers = 0;
  uint32_t n_heads = 0;
  uint32_t d_ffn = 0;
  uint32_t max_seq_len = 0;
  float dropout_rate = 0.0f;
};

struct Checkpoint {
  CheckpointConfig config;
  Params<float> params;
};

// Binary layout: magic "MGEH", u32 version, architecture block (six u32 plus
// one f32), u32 parameter count, then per parameter: u16 name length, name
// bytes, u32 rank, u32 dims, little-endian f32 values.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace clinembed
