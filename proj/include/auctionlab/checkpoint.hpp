#pragma once

// Binary checkpoint format. Layout (little-endian):
//   magic "ALABCKP1", u32 version, header, named tensor table, adam state,
//   u64 FNV-1a checksum over everything after the magic.
// Floats are stored 64-bit in f64 runs and 32-bit in f32 runs (lossless there,
// since f32 runs round every write through float).

#include <string>
#include <vector>

#include "auctionlab/training.hpp"

namespace auctionlab {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  uint32_t version = 1;
  NetConfig net_config;
  Precision stored_precision = Precision::f64;
  TrainState state;
  std::vector<NamedParam> params;

  int64_t adam_t = 0;
  std::vector<std::vector<double>> adam_m, adam_v;

  uint64_t picker_state = 0;
  std::vector<int64_t> cursors;
};

Checkpoint make_checkpoint(const MechanismNetwork& net, const TrainState& state,
                           const AdamOptimizer& opt, const BatchSource* source);

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the network carried by the checkpoint, parameters included.
MechanismNetwork restore_network(const Checkpoint& ckpt);

// Restores optimizer moments and the batch-source cursors.
void restore_training(const Checkpoint& ckpt, AdamOptimizer& opt,
                      BatchSource* source);

}  // namespace auctionlab
