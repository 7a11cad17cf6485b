#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "mmtod/nn.hpp"
#include "mmtod/tensor.hpp"

namespace mmtod {

// Versioned binary container: named double tensors plus a JSON metadata
// blob (epoch counters, RNG state, schedules). Round-trips are bitwise.
struct Checkpoint {
  std::string kind;  // "translator" | "detector" | "trainrun"
  uint64_t config_hash = 0;
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint_file(const Checkpoint& ck, const std::string& path);

// Throws on bad magic/version; if expected_kind is non-empty and does not
// match the stored kind, throws naming both kinds.
Checkpoint load_checkpoint_file(const std::string& path,
                                const std::string& expected_kind = "");

// Copy parameter values into / out of a checkpoint under name prefixes.
void pack_params(Checkpoint& ck, const std::string& prefix, const ParamList& params);
// Throws if a named tensor is missing or has the wrong shape.
void unpack_params(const Checkpoint& ck, const std::string& prefix, const ParamList& params);

void pack_state(Checkpoint& ck, const std::string& prefix,
                const std::map<std::string, Tensor>& state);
void unpack_state(const Checkpoint& ck, const std::string& prefix,
                  std::map<std::string, Tensor>& state);

// FNV-1a over a string (used for config hashes).
uint64_t hash_string(const std::string& s);

}  // namespace mmtod
