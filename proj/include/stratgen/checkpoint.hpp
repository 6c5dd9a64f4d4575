#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stratgen/tensor.hpp"

namespace stratgen {

// Named-array checkpoint container. Byte layout (all integers little-endian):
//
//   magic   8 bytes  "SGCKPT\0\0"
//   u32     format version (currently 1)
//   u32     kind length, then kind bytes       e.g. "vq_tokenizer"
//   u32     config length, then config bytes   canonical RunConfig echo
//   u32     number of arrays
//   per array:
//     u32   name length, then name bytes
//     u32   ndim, then u32 dims[ndim]
//     u64   payload bytes (= product(dims) * 4)
//     f32   payload, little-endian
//
// Round trips are bit-exact. Loads fail loudly naming the offending field:
// bad magic, unknown version, kind mismatch, truncation, shape mismatch.

struct Checkpoint {
  std::string kind;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> arrays;
};

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_text, const std::vector<Parameter*>& params);

Checkpoint read_checkpoint(const std::string& path);

// Copies arrays into an already-built parameter list; validates kind, names,
// order and shapes.
void load_checkpoint_into(const std::string& path, const std::string& expected_kind,
                          const std::vector<Parameter*>& params);

// Kind tag stored in a checkpoint without loading payloads.
std::string checkpoint_kind(const std::string& path);
std::string checkpoint_config(const std::string& path);

}  // namespace stratgen
