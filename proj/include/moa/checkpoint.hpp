#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "moa/ffn.hpp"

namespace moa {

// Text manifest followed by a little-endian float64 payload:
//
//   moa-checkpoint 1
//   config <key>=<value>            (any number)
//   tensor <name> <d0>x<d1>... <byte offset>
//   payload <byte count>
//   <raw bytes>
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& config,
                     const std::vector<NamedParam>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies stored values into same-named, same-shaped parameters.
void restore_parameters(const Checkpoint& checkpoint, const std::vector<NamedParam>& params);

}  // namespace moa
