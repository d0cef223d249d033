#pragma once

#include "focl/autodiff.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace focl {

// Flat binary parameter dump. Values round-trip bit-exactly; the producing
// run's materialized config and its hash travel with the file so a
// checkpoint can be rebuilt standalone and mismatches can be refused.
struct LoadedCheckpoint {
  std::uint64_t config_hash = 0;
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& id) const;
};

void save_checkpoint(const std::string& path,
                     const std::vector<const Parameter*>& params,
                     const std::string& config_json,
                     std::uint64_t config_hash);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies stored values into matching parameters. A missing id or a shape
// mismatch is an I/O error naming the parameter.
void apply_checkpoint(const LoadedCheckpoint& ck,
                      const std::vector<Parameter*>& params);

}  // namespace focl
