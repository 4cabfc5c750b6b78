#include "fedmpdd/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fedmpdd/rng.hpp"

namespace fedmpdd {
namespace {

// Fisher-Yates over [0, n) driven by a SplitMix64 stream.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(key);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

std::vector<int> sorted_inventory(const Dataset& dataset,
                                  const std::vector<std::size_t>& rows) {
  std::vector<int> inv;
  for (std::size_t r : rows) inv.push_back(dataset.labels[r]);
  std::sort(inv.begin(), inv.end());
  inv.erase(std::unique(inv.begin(), inv.end()), inv.end());
  return inv;
}

}  // namespace

Dataset synth_logistic(std::size_t n, std::size_t p, int classes,
                       double separation, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("synth_logistic: need at least 2 classes");
  if (n < static_cast<std::size_t>(classes)) {
    throw std::invalid_argument("synth_logistic: need n >= classes");
  }
  if (p < 1) throw std::invalid_argument("synth_logistic: need p >= 1");

  Dataset out;
  out.class_count = classes;
  out.inputs = RowMatrix(n, p);
  out.labels.resize(n);
  SplitMix64 rng(derive_key(seed, purpose::kData));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    out.labels[i] = label;
    const std::size_t axis = static_cast<std::size_t>(label / 2) % p;
    const double sign = (label % 2 == 0) ? 1.0 : -1.0;
    double* x = out.inputs.row(i);
    for (std::size_t k = 0; k < p; ++k) x[k] = rng.next_gaussian();
    x[axis] += sign * separation / 2.0;
  }
  return out;
}

IdxData parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw std::runtime_error("IDX: truncated header");
  const std::uint32_t magic = read_be32(bytes.data());
  const bool images = magic == 0x00000803u;
  const bool labels = magic == 0x00000801u;
  if (!images && !labels) throw std::runtime_error("IDX: unknown IDX magic");

  const std::size_t ndim = images ? 3 : 1;
  if (bytes.size() < 4 + 4 * ndim) throw std::runtime_error("IDX: truncated dimension header");
  std::uint64_t dims[3] = {1, 1, 1};
  for (std::size_t k = 0; k < ndim; ++k) dims[k] = read_be32(bytes.data() + 4 + 4 * k);

  std::uint64_t total = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    if (dims[k] != 0 && total > UINT64_MAX / dims[k]) {
      throw std::runtime_error("IDX: dimension overflow");
    }
    total *= dims[k];
  }
  if (total > (std::size_t{1} << 40)) throw std::runtime_error("IDX: dimension overflow");
  const std::size_t payload = bytes.size() - 4 - 4 * ndim;
  if (payload < total) throw std::runtime_error("IDX: truncated payload");

  IdxData out;
  const std::uint8_t* body = bytes.data() + 4 + 4 * ndim;
  if (images) {
    out.is_images = true;
    out.image_rows = dims[1];
    out.image_cols = dims[2];
    out.images = RowMatrix(dims[0], dims[1] * dims[2]);
    for (std::size_t i = 0; i < total; ++i) {
      out.images.data[i] = static_cast<double>(body[i]) / 255.0;
    }
  } else {
    out.labels.resize(dims[0]);
    for (std::size_t i = 0; i < dims[0]; ++i) out.labels[i] = body[i];
  }
  return out;
}

IdxData parse_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("IDX: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

Dataset dataset_from_idx(const IdxData& images, const IdxData& labels) {
  if (!images.is_images || labels.is_images) {
    throw std::runtime_error("IDX: expected one image block and one label block");
  }
  if (images.images.rows != labels.labels.size()) {
    throw std::runtime_error("IDX: image/label count mismatch");
  }
  Dataset out;
  out.inputs = images.images;
  out.labels = labels.labels;
  int max_label = 0;
  for (int y : out.labels) max_label = std::max(max_label, y);
  out.class_count = max_label + 1;
  return out;
}

std::vector<ClientShard> partition(const Dataset& dataset, std::size_t n_clients,
                                   PartitionMode mode, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n_clients < 1) throw std::invalid_argument("partition: need at least one client");
  if (n_clients > n) throw std::invalid_argument("partition: more clients than samples");

  std::vector<ClientShard> shards(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) shards[i].owner = i;

  if (mode == PartitionMode::kIid) {
    const std::vector<std::size_t> perm = shuffled_indices(n, derive_key(seed, purpose::kData));
    const std::size_t base = n / n_clients;
    const std::size_t rem = n % n_clients;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < n_clients; ++i) {
      const std::size_t take = base + (i < rem ? 1 : 0);
      shards[i].rows.assign(perm.begin() + cursor, perm.begin() + cursor + take);
      cursor += take;
    }
  } else {
    // Per-class row lists, shuffled within class so the slicing is seeded but
    // every slice stays single-class.
    std::vector<std::vector<std::size_t>> by_class(dataset.class_count);
    for (std::size_t i = 0; i < n; ++i) by_class[dataset.labels[i]].push_back(i);
    std::size_t nonempty = 0;
    for (const auto& rows : by_class) nonempty += rows.empty() ? 0 : 1;
    const std::size_t slice_count = 2 * n_clients;
    if (nonempty > slice_count) {
      throw std::invalid_argument("partition: cannot build 2N single-class slices");
    }
    for (int c = 0; c < dataset.class_count; ++c) {
      auto& rows = by_class[c];
      const std::vector<std::size_t> perm =
          shuffled_indices(rows.size(), derive_key(derive_key(seed, purpose::kData), c));
      std::vector<std::size_t> shuffled(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) shuffled[i] = rows[perm[i]];
      rows = std::move(shuffled);
    }

    // Slice quota per class by largest remainder, at least one per class.
    std::vector<std::size_t> quota(dataset.class_count, 0);
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (int c = 0; c < dataset.class_count; ++c) {
      if (by_class[c].empty()) continue;
      const double exact = static_cast<double>(slice_count) * by_class[c].size() / n;
      quota[c] = std::max<std::size_t>(1, static_cast<std::size_t>(exact));
      assigned += quota[c];
      remainders.push_back({exact - static_cast<double>(quota[c]), c});
    }
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                return a.first != b.first ? a.first > b.first : a.second < b.second;
              });
    for (std::size_t i = 0; assigned < slice_count; i = (i + 1) % remainders.size()) {
      ++quota[remainders[i].second];
      ++assigned;
    }
    while (assigned > slice_count) {
      // Over-assignment can only come from the min-1 floor; shrink the
      // largest quotas back down.
      auto it = std::max_element(quota.begin(), quota.end());
      if (*it <= 1) throw std::invalid_argument("partition: cannot build 2N single-class slices");
      --*it;
      --assigned;
    }

    // Cut each class into its quota of near-equal slices, in class order.
    std::vector<std::vector<std::size_t>> slices;
    slices.reserve(slice_count);
    for (int c = 0; c < dataset.class_count; ++c) {
      if (by_class[c].empty()) continue;
      const auto& rows = by_class[c];
      const std::size_t q = quota[c];
      std::size_t cursor = 0;
      for (std::size_t s = 0; s < q; ++s) {
        const std::size_t take = rows.size() / q + (s < rows.size() % q ? 1 : 0);
        slices.emplace_back(rows.begin() + cursor, rows.begin() + cursor + take);
        cursor += take;
      }
    }

    // Deal two slices per client: pass one hands out slice i, pass two N+i.
    for (std::size_t i = 0; i < n_clients; ++i) {
      auto& rows = shards[i].rows;
      rows.insert(rows.end(), slices[i].begin(), slices[i].end());
      rows.insert(rows.end(), slices[n_clients + i].begin(), slices[n_clients + i].end());
    }
  }

  for (auto& shard : shards) shard.class_inventory = sorted_inventory(dataset, shard.rows);
  return shards;
}

Batch gather_batch(const Dataset& dataset, std::span<const std::size_t> rows) {
  Batch batch;
  batch.inputs = RowMatrix(rows.size(), dataset.inputs.cols);
  batch.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = dataset.inputs.row(rows[i]);
    std::copy(src, src + dataset.inputs.cols, batch.inputs.row(i));
    batch.labels[i] = dataset.labels[rows[i]];
  }
  return batch;
}

}  // namespace fedmpdd
