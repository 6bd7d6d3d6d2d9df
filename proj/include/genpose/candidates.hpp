#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "genpose/diffusion.hpp"
#include "genpose/geometry.hpp"

namespace genpose {

struct PoseCandidateSet {
  std::vector<Pose> candidates;
  std::optional<std::vector<double>> energies;  // one per candidate when present
  // Position of each candidate in the originally sampled set; empty means 0..n-1.
  std::vector<int> source_index;
  std::string condition_id;
  std::uint64_t seed = 0;
  NoiseSchedule schedule;

  std::size_t size() const { return candidates.size(); }
  int source_of(std::size_t i) const { return source_index.empty() ? static_cast<int>(i) : source_index[i]; }
  // Throws InvalidArgument when energies or source indices do not match the candidates.
  void validate() const;
};

}  // namespace genpose
