#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pscl/errors.hpp"

namespace pscl {

// Example-similarity graphs of the activation geometry: vertices are
// examples, adjacency A = features * features^T, an edge joins i != j when
// A_ij > tau. Built from Y (parent predictions) or B (duplicate activities).
struct ActivityGraph {
  std::int64_t m = 0;
  std::vector<double> adjacency;  // m x m, symmetric by construction
  double tau = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;  // i < j

  bool has_edge(std::int64_t i, std::int64_t j) const {
    return adjacency[static_cast<std::size_t>(i * m + j)] > tau;
  }
};

inline ActivityGraph build_graph(const double* features, std::int64_t m, std::int64_t n, double tau) {
  check_contract(tau >= 0, "build_graph: tau must be >= 0");
  ActivityGraph g;
  g.m = m;
  g.tau = tau;
  g.adjacency.assign(static_cast<std::size_t>(m * m), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = i; j < m; ++j) {
      const double* a = features + i * n;
      const double* b = features + j * n;
      double s = 0;
      for (std::int64_t t = 0; t < n; ++t) s += a[t] * b[t];
      // one dot product per pair keeps the matrix bitwise symmetric
      g.adjacency[static_cast<std::size_t>(i * m + j)] = s;
      g.adjacency[static_cast<std::size_t>(j * m + i)] = s;
    }
  }
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = i + 1; j < m; ++j)
      if (g.adjacency[static_cast<std::size_t>(i * m + j)] > tau) g.edges.emplace_back(i, j);
  return g;
}

// q-th percentile (0..100, nearest-rank) of the off-diagonal adjacency mass;
// float activations are rarely exactly zero, so the diagnostic threshold is
// scale-free rather than absolute.
inline double offdiag_percentile(const std::vector<double>& adjacency, std::int64_t m, double q) {
  check_contract(m >= 2, "percentile: need at least 2 vertices");
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = i + 1; j < m; ++j) vals.push_back(adjacency[static_cast<std::size_t>(i * m + j)]);
  std::sort(vals.begin(), vals.end());
  const double rank = q / 100.0 * static_cast<double>(vals.size() - 1);
  auto idx = static_cast<std::size_t>(rank + 0.5);
  if (idx >= vals.size()) idx = vals.size() - 1;
  return vals[idx];
}

struct UnionFind {
  std::vector<std::int64_t> parent, rank_;
  explicit UnionFind(std::int64_t n) : parent(static_cast<std::size_t>(n)), rank_(static_cast<std::size_t>(n), 0) {
    for (std::int64_t i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
  }
  std::int64_t find(std::int64_t x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(std::int64_t a, std::int64_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[static_cast<std::size_t>(a)] < rank_[static_cast<std::size_t>(b)]) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
    if (rank_[static_cast<std::size_t>(a)] == rank_[static_cast<std::size_t>(b)]) ++rank_[static_cast<std::size_t>(a)];
  }
};

struct ComponentStats {
  std::int64_t delta = 0;                 // component count
  std::vector<std::int64_t> sizes;        // descending
  std::vector<double> mean_degree;        // aligned with sizes
  std::vector<std::int64_t> component_of; // per vertex
};

inline ComponentStats connected_components(const ActivityGraph& g) {
  UnionFind uf(g.m);
  for (const auto& [i, j] : g.edges) uf.unite(i, j);
  std::vector<std::int64_t> degree(static_cast<std::size_t>(g.m), 0);
  for (const auto& [i, j] : g.edges) {
    ++degree[static_cast<std::size_t>(i)];
    ++degree[static_cast<std::size_t>(j)];
  }
  ComponentStats stats;
  stats.component_of.assign(static_cast<std::size_t>(g.m), -1);
  std::vector<std::int64_t> roots;
  std::vector<std::int64_t> size_by_root, degsum_by_root;
  for (std::int64_t v = 0; v < g.m; ++v) {
    const std::int64_t r = uf.find(v);
    auto it = std::find(roots.begin(), roots.end(), r);
    std::size_t idx;
    if (it == roots.end()) {
      idx = roots.size();
      roots.push_back(r);
      size_by_root.push_back(0);
      degsum_by_root.push_back(0);
    } else {
      idx = static_cast<std::size_t>(it - roots.begin());
    }
    stats.component_of[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(idx);
    ++size_by_root[idx];
    degsum_by_root[idx] += degree[static_cast<std::size_t>(v)];
  }
  stats.delta = static_cast<std::int64_t>(roots.size());
  std::vector<std::size_t> order(roots.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return size_by_root[a] > size_by_root[b]; });
  for (std::size_t i : order) {
    stats.sizes.push_back(size_by_root[i]);
    stats.mean_degree.push_back(static_cast<double>(degsum_by_root[i]) /
                                static_cast<double>(size_by_root[i]));
  }
  return stats;
}

// Fraction of g_m's edges also present in g_y. The duplicate-level graph is
// expected to approximate a spanning subgraph of the parent-level graph.
struct SpanningReport {
  double fraction = 1.0;  // vacuously 1 when g_m has no edges
  bool exact_subset = true;
  std::int64_t checked = 0, present = 0;
};

inline SpanningReport spanning_check(const ActivityGraph& g_y, const ActivityGraph& g_m) {
  if (g_y.m != g_m.m)
    throw contract_error("spanning_check: vertex counts differ, " + std::to_string(g_y.m) + " vs " +
                         std::to_string(g_m.m));
  SpanningReport rep;
  rep.checked = static_cast<std::int64_t>(g_m.edges.size());
  for (const auto& [i, j] : g_m.edges)
    if (g_y.has_edge(i, j)) ++rep.present;
  if (rep.checked > 0) {
    rep.fraction = static_cast<double>(rep.present) / static_cast<double>(rep.checked);
    rep.exact_subset = rep.present == rep.checked;
  }
  return rep;
}

inline void write_edges_csv(const std::string& path, const ActivityGraph& g) {
  std::ofstream out(path);
  if (!out) throw io_error(path + ": cannot open for writing");
  out << "i,j,weight\n";
  char buf[64];
  for (const auto& [i, j] : g.edges) {
    std::snprintf(buf, sizeof buf, "%.17g", g.adjacency[static_cast<std::size_t>(i * g.m + j)]);
    out << i << "," << j << "," << buf << "\n";
  }
}

}  // namespace pscl
