#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "geocell/rng.hpp"

namespace geocell {

struct HnswConfig {
  std::size_t max_degree_m = 16;
  std::size_t ef_construction = 200;
  std::uint64_t seed = 1;
};

// Layered small-world graph over unit vectors, searched by dot product.
// Inserts are sequential and deterministic; finish() seals the index and
// links any stray component back to the entry point, after which layer 0 is
// fully reachable and a beam as wide as the index is exhaustive. Sealed
// indexes are immutable and safe for concurrent queries.
class HnswIndex {
 public:
  explicit HnswIndex(std::size_t dim, const HnswConfig& config = {});

  // Appends a vector; returns its id. Throws ShapeError on a dimension
  // mismatch and ValidationError after finish().
  std::size_t add(const std::vector<float>& vec);

  // Seals the index (idempotent).
  void finish();

  // Top-n (score, id) pairs by dot product, descending score with ties by
  // ascending id, using a layer-0 beam of width max(ef, n). Requires a
  // sealed, non-empty index and ef >= n; throws ValidationError otherwise.
  std::vector<std::pair<double, std::size_t>> search(
      const std::vector<float>& query, std::size_t n, std::size_t ef) const;

  std::size_t size() const { return levels_.size(); }
  std::size_t dim() const { return dim_; }
  bool finished() const { return finished_; }

  // Introspection for structural checks.
  std::size_t max_out_degree() const;
  std::size_t reachable_from_entry() const;

 private:
  double dot_id(std::size_t id, const float* q) const;
  std::size_t greedy_descent(const float* q, std::size_t start, int from_level,
                             int to_level) const;
  std::vector<std::pair<double, std::size_t>> search_layer(
      const float* q, std::size_t entry, std::size_t ef, int level) const;
  std::vector<std::size_t> select_neighbors(
      const std::vector<std::pair<double, std::size_t>>& cands,
      std::size_t m) const;
  std::vector<char> reachability() const;

  std::size_t dim_;
  HnswConfig config_;
  double level_scale_;
  Rng rng_;

  std::vector<float> vectors_;  // flat, dim_ per node
  std::vector<int> levels_;
  // links_[node][layer] = out-neighbor ids, layer 0..levels_[node]
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;
  std::size_t entry_point_ = 0;
  int max_level_ = -1;
  bool finished_ = false;
  std::set<std::pair<std::uint32_t, std::uint32_t>> repaired_;
};

}  // namespace geocell
