#pragma once

// Directory layout of a synthetic benchmark:
//   DIR/index.json
//   DIR/pair_000/{fixed,moving,fixed_labels,moving_labels,psi_true}.cvol
//   ...

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "corrmlp/synth.hpp"
#include "corrmlp/trainer.hpp"

namespace corrmlp {

struct DatasetPairFiles {
  std::string name;
  uint64_t seed = 0;
};

struct DatasetIndex {
  uint64_t seed = 0;
  SyntheticPairSpec spec;  // spec.seed unused
  std::vector<DatasetPairFiles> pairs;
};

/// Seed of the i-th pair of a dataset generated with `seed`.
uint64_t dataset_pair_seed(uint64_t seed, int64_t index);

/// Generates `count` pairs into `dir` (created if needed); returns the index.
DatasetIndex write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticPairSpec& spec, int64_t count,
                                     uint64_t seed);

DatasetIndex read_dataset_index(const std::filesystem::path& dir);

struct LoadedDataset {
  DatasetIndex index;
  std::vector<RegistrationPair> pairs;  // label maps left empty when missing
  std::vector<std::string> warnings;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

inline bool has_labels(const RegistrationPair& p) {
  return !p.fixed_labels.labels().empty() && !p.moving_labels.labels().empty();
}

}  // namespace corrmlp
