#include "geocell/hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

#include "geocell/errors.hpp"

namespace geocell {

HnswIndex::HnswIndex(std::size_t dim, const HnswConfig& config)
    : dim_(dim),
      config_(config),
      level_scale_(1.0 / std::log(static_cast<double>(config.max_degree_m))),
      rng_(config.seed) {
  if (dim == 0) throw ValidationError("vector dimension must be positive");
  if (config.max_degree_m < 2)
    throw ValidationError("max degree must be at least 2");
  if (config.ef_construction < 1)
    throw ValidationError("ef_construction must be positive");
}

double HnswIndex::dot_id(std::size_t id, const float* q) const {
  const float* v = vectors_.data() + id * dim_;
  double acc = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) acc += static_cast<double>(v[d]) * q[d];
  return acc;
}

std::size_t HnswIndex::greedy_descent(const float* q, std::size_t start,
                                      int from_level, int to_level) const {
  std::size_t cur = start;
  double best = dot_id(cur, q);
  for (int level = from_level; level > to_level; --level) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (const std::uint32_t nb : links_[cur][level]) {
        const double s = dot_id(nb, q);
        if (s > best) {
          best = s;
          cur = nb;
          improved = true;
        }
      }
    }
  }
  return cur;
}

std::vector<std::pair<double, std::size_t>> HnswIndex::search_layer(
    const float* q, std::size_t entry, std::size_t ef, int level) const {
  std::vector<char> visited(levels_.size(), 0);
  // Max-heap of unexpanded candidates, min-heap of the ef best found.
  std::priority_queue<std::pair<double, std::size_t>> candidates;
  std::priority_queue<std::pair<double, std::size_t>,
                      std::vector<std::pair<double, std::size_t>>,
                      std::greater<>>
      best;

  const double s0 = dot_id(entry, q);
  visited[entry] = 1;
  candidates.emplace(s0, entry);
  best.emplace(s0, entry);

  while (!candidates.empty()) {
    const auto [score, node] = candidates.top();
    candidates.pop();
    if (best.size() >= ef && score < best.top().first) break;
    for (const std::uint32_t nb : links_[node][level]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      const double s = dot_id(nb, q);
      if (best.size() < ef || s > best.top().first) {
        candidates.emplace(s, nb);
        best.emplace(s, nb);
        if (best.size() > ef) best.pop();
      }
    }
  }

  std::vector<std::pair<double, std::size_t>> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());  // descending score
  return out;
}

std::vector<std::size_t> HnswIndex::select_neighbors(
    const std::vector<std::pair<double, std::size_t>>& cands,
    std::size_t m) const {
  // Keep a candidate only when it is closer to the target than to every
  // neighbor already kept; this spreads edges across directions. Pruned
  // candidates fill any remaining slots in score order.
  std::vector<std::size_t> kept;
  std::vector<std::size_t> pruned;
  for (const auto& [score, id] : cands) {
    if (kept.size() >= m) break;
    bool keep = true;
    const float* vid = vectors_.data() + id * dim_;
    for (const std::size_t k : kept) {
      if (dot_id(k, vid) > score) {
        keep = false;
        break;
      }
    }
    if (keep) {
      kept.push_back(id);
    } else {
      pruned.push_back(id);
    }
  }
  for (const std::size_t id : pruned) {
    if (kept.size() >= m) break;
    kept.push_back(id);
  }
  return kept;
}

std::size_t HnswIndex::add(const std::vector<float>& vec) {
  if (finished_) throw ValidationError("index is sealed");
  if (vec.size() != dim_) throw ShapeError("vector dimension mismatch");

  const std::size_t id = levels_.size();
  vectors_.insert(vectors_.end(), vec.begin(), vec.end());
  const double u = 1.0 - rng_.uniform();  // (0, 1]
  const int level = static_cast<int>(std::floor(-std::log(u) * level_scale_));
  levels_.push_back(level);
  links_.emplace_back(static_cast<std::size_t>(level) + 1);

  if (id == 0) {
    entry_point_ = 0;
    max_level_ = level;
    return id;
  }

  const float* q = vec.data();
  std::size_t cur = entry_point_;
  if (max_level_ > level) cur = greedy_descent(q, cur, max_level_, level);

  const std::size_t m = config_.max_degree_m;
  for (int layer = std::min(level, max_level_); layer >= 0; --layer) {
    const auto cands = search_layer(q, cur, config_.ef_construction, layer);
    const auto neighbors = select_neighbors(cands, m);
    links_[id][layer].assign(neighbors.begin(), neighbors.end());
    for (const std::size_t nb : neighbors) {
      auto& back = links_[nb][layer];
      if (back.size() < m) {
        back.push_back(static_cast<std::uint32_t>(id));
        continue;
      }
      // Re-select under the degree cap, considering the new edge too.
      const float* nbv = vectors_.data() + nb * dim_;
      std::vector<std::pair<double, std::size_t>> pool;
      pool.reserve(back.size() + 1);
      for (const std::uint32_t e : back) pool.emplace_back(dot_id(e, nbv), e);
      pool.emplace_back(dot_id(id, nbv), id);
      std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      const auto reselected = select_neighbors(pool, m);
      back.assign(reselected.begin(), reselected.end());
    }
    if (!cands.empty()) cur = cands.front().second;
  }

  if (level > max_level_) {
    entry_point_ = id;
    max_level_ = level;
  }
  return id;
}

std::vector<char> HnswIndex::reachability() const {
  std::vector<char> seen(levels_.size(), 0);
  if (levels_.empty()) return seen;
  std::vector<std::size_t> stack = {entry_point_};
  seen[entry_point_] = 1;
  while (!stack.empty()) {
    const std::size_t node = stack.back();
    stack.pop_back();
    for (const std::uint32_t nb : links_[node][0]) {
      if (!seen[nb]) {
        seen[nb] = 1;
        stack.push_back(nb);
      }
    }
  }
  return seen;
}

void HnswIndex::finish() {
  if (finished_) return;
  finished_ = true;
  if (levels_.size() < 2) return;

  std::vector<char> seen = reachability();
  const std::size_t m = config_.max_degree_m;
  while (true) {
    std::size_t orphan = levels_.size();
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (!seen[i]) {
        orphan = i;
        break;
      }
    }
    if (orphan == levels_.size()) break;

    // Attach the orphan to its most similar reachable node, preferring one
    // with a free slot, otherwise evicting that node's weakest edge not
    // added by an earlier repair.
    const float* ov = vectors_.data() + orphan * dim_;
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(levels_.size());
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (seen[i]) order.emplace_back(dot_id(i, ov), i);
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    bool attached = false;
    for (const auto& [score, host] : order) {
      auto& out = links_[host][0];
      if (out.size() < m) {
        out.push_back(static_cast<std::uint32_t>(orphan));
      } else {
        const float* hv = vectors_.data() + host * dim_;
        std::size_t worst = out.size();
        double worst_score = 0.0;
        for (std::size_t e = 0; e < out.size(); ++e) {
          if (repaired_.count({static_cast<std::uint32_t>(host), out[e]}))
            continue;
          const double s = dot_id(out[e], hv);
          if (worst == out.size() || s < worst_score) {
            worst = e;
            worst_score = s;
          }
        }
        if (worst == out.size()) continue;  // every edge is load-bearing
        out[worst] = static_cast<std::uint32_t>(orphan);
      }
      repaired_.insert({static_cast<std::uint32_t>(host),
                        static_cast<std::uint32_t>(orphan)});
      if (links_[orphan][0].size() < m &&
          std::find(links_[orphan][0].begin(), links_[orphan][0].end(),
                    static_cast<std::uint32_t>(host)) ==
              links_[orphan][0].end()) {
        links_[orphan][0].push_back(static_cast<std::uint32_t>(host));
      }
      attached = true;
      break;
    }
    if (!attached)
      throw ResourceError("graph repair exhausted every reachable node");

    // Everything the orphan links onward to becomes reachable as well.
    std::vector<std::size_t> stack = {orphan};
    seen[orphan] = 1;
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      for (const std::uint32_t nb : links_[node][0]) {
        if (!seen[nb]) {
          seen[nb] = 1;
          stack.push_back(nb);
        }
      }
    }
  }
}

std::vector<std::pair<double, std::size_t>> HnswIndex::search(
    const std::vector<float>& query, std::size_t n, std::size_t ef) const {
  if (!finished_) throw ValidationError("search requires a sealed index");
  if (levels_.empty()) throw ValidationError("search on an empty index");
  if (query.size() != dim_) throw ShapeError("query dimension mismatch");
  if (n < 1) throw ValidationError("n must be positive");
  if (ef < n) throw ValidationError("ef_search must be at least n");

  const float* q = query.data();
  const std::size_t entry = greedy_descent(q, entry_point_, max_level_, 0);
  auto found = search_layer(q, entry, std::max(ef, n), 0);
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (found.size() > n) found.resize(n);
  return found;
}

std::size_t HnswIndex::max_out_degree() const {
  std::size_t top = 0;
  for (const auto& layers : links_) {
    for (const auto& edges : layers) top = std::max(top, edges.size());
  }
  return top;
}

std::size_t HnswIndex::reachable_from_entry() const {
  const std::vector<char> seen = reachability();
  std::size_t count = 0;
  for (const char c : seen) count += c != 0;
  return count;
}

}  // namespace geocell
