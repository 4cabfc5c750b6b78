#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedmpdd/model.hpp"

namespace fedmpdd {

struct Dataset {
  RowMatrix inputs;         // n x p, image features scaled to [0,1]
  std::vector<int> labels;  // in [0, class_count)
  int class_count = 0;

  std::size_t size() const { return inputs.rows; }
};

// One client's slice of a dataset: row indices plus the labels it contains.
struct ClientShard {
  std::size_t owner = 0;
  std::vector<std::size_t> rows;
  std::vector<int> class_inventory;  // sorted, distinct
};

enum class PartitionMode { kIid, kTwoClass };

// C Gaussian clusters with unit covariance. Class c's mean sits at
// (separation/2) * (+/- e_axis) so the first two classes are exactly
// `separation` apart; labels are dealt round-robin (balanced within 1).
Dataset synth_logistic(std::size_t n, std::size_t p, int classes,
                       double separation, std::uint64_t seed);

// Parsed IDX container content: either an image block or a label block.
struct IdxData {
  bool is_images = false;
  RowMatrix images;          // n x (rows*cols), scaled by 1/255
  std::vector<int> labels;   // when !is_images
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
};

// Big-endian IDX reader (magic 0x803 = ubyte images, 0x801 = ubyte labels).
// Malformed input raises std::runtime_error with a descriptive message.
IdxData parse_idx(std::span<const std::uint8_t> bytes);
IdxData parse_idx_file(const std::string& path);

// Combines an image block and a label block into a Dataset.
Dataset dataset_from_idx(const IdxData& images, const IdxData& labels);

// Disjoint cover of the dataset rows over N clients. kIid is a seed-shuffled
// equal split; kTwoClass shuffles within each class, cuts the label-sorted
// order into 2N single-class slices, and deals slices (i, N+i) to client i so
// each shard sees at most two classes.
std::vector<ClientShard> partition(const Dataset& dataset, std::size_t n_clients,
                                   PartitionMode mode, std::uint64_t seed);

// Gathers the given rows into an owned batch.
Batch gather_batch(const Dataset& dataset, std::span<const std::size_t> rows);

}  // namespace fedmpdd
