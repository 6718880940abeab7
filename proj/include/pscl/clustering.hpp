#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "pscl/acol.hpp"
#include "pscl/errors.hpp"
#include "pscl/rng.hpp"
#include "pscl/trainer.hpp"

namespace pscl {

// ---------------------------------------------------------------------------
// Latent extraction
// ---------------------------------------------------------------------------

enum class LatentTap { Latent, PreSoftmax, Softmax };

inline LatentTap parse_tap(const std::string& name) {
  if (name == "latent") return LatentTap::Latent;
  if (name == "presoftmax") return LatentTap::PreSoftmax;
  if (name == "softmax") return LatentTap::Softmax;
  throw config_error("unknown tap '" + name + "'; valid: latent, presoftmax, softmax");
}

// Row-major m x d matrix of plain values.
struct Matrix {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> data;
  double* row(std::int64_t i) { return data.data() + i * cols; }
  const double* row(std::int64_t i) const { return data.data() + i * cols; }
};

// Eval-mode representation of untransformed examples at the chosen tap.
// Batched to bound peak memory; row order matches dataset order.
inline Matrix extract_latent(const Trainer& trainer, const ImagesView& x, LatentTap tap,
                             std::int64_t batch = 256) {
  Matrix out;
  out.rows = x.m;
  const std::int64_t isz = x.image_size();
  for (std::int64_t start = 0; start < x.m; start += batch) {
    const std::int64_t count = std::min(batch, x.m - start);
    Tensor in = Tensor::zeros({count, x.c, x.h, x.w});
    std::copy(x.data + start * isz, x.data + (start + count) * isz, in.data());
    ForwardResult fr = trainer.forward_eval(in);
    Tensor rep;
    switch (tap) {
      case LatentTap::Latent:
        rep = fr.latent;
        break;
      case LatentTap::PreSoftmax:
        rep = fr.presoftmax;
        break;
      case LatentTap::Softmax:
        rep = softmax_rows(fr.presoftmax);
        break;
    }
    if (out.cols == 0) {
      out.cols = rep.dim(1);
      out.data.resize(static_cast<std::size_t>(out.rows * out.cols));
    }
    std::copy(rep.data(), rep.data() + count * out.cols, out.row(start));
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means (k-means++ seeding, Lloyd iterations, best-of-restarts)
// ---------------------------------------------------------------------------

struct KmeansResult {
  std::int64_t k = 0;
  Matrix centroids;               // k x d
  std::vector<int> assignments;   // m
  double inertia = 0;
  int best_restart = -1;
  std::vector<double> inertia_history;  // of the winning restart, per Lloyd pass
};

namespace detail {

inline double sqdist(const double* a, const double* b, std::int64_t d) {
  double s = 0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

struct LloydRun {
  Matrix centroids;
  std::vector<int> assign;
  double inertia = 0;
  std::vector<double> history;
};

inline LloydRun lloyd_once(const double* pts, std::int64_t m, std::int64_t d, std::int64_t k,
                           Rng& rng, std::int64_t max_iters) {
  LloydRun run;
  run.centroids.rows = k;
  run.centroids.cols = d;
  run.centroids.data.resize(static_cast<std::size_t>(k * d));

  // k-means++: first center uniform, then D^2-weighted draws.
  std::vector<double> dist2(static_cast<std::size_t>(m), std::numeric_limits<double>::max());
  {
    const std::int64_t first = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(m)));
    std::copy(pts + first * d, pts + (first + 1) * d, run.centroids.row(0));
  }
  for (std::int64_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::int64_t i = 0; i < m; ++i) {
      const double d2 = sqdist(pts + i * d, run.centroids.row(c - 1), d);
      if (d2 < dist2[static_cast<std::size_t>(i)]) dist2[static_cast<std::size_t>(i)] = d2;
      total += dist2[static_cast<std::size_t>(i)];
    }
    std::int64_t pick = 0;
    if (total > 0) {
      const double r = rng.uniform01() * total;
      double acc = 0;
      pick = m - 1;
      for (std::int64_t i = 0; i < m; ++i) {
        acc += dist2[static_cast<std::size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(m)));
    }
    std::copy(pts + pick * d, pts + (pick + 1) * d, run.centroids.row(c));
  }

  run.assign.assign(static_cast<std::size_t>(m), -1);
  std::vector<double> sums(static_cast<std::size_t>(k * d));
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k));
  for (std::int64_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0;
    for (std::int64_t i = 0; i < m; ++i) {
      int best = 0;
      double bd = sqdist(pts + i * d, run.centroids.row(0), d);
      for (std::int64_t c = 1; c < k; ++c) {
        const double d2 = sqdist(pts + i * d, run.centroids.row(c), d);
        if (d2 < bd) {
          bd = d2;
          best = static_cast<int>(c);
        }
      }
      inertia += bd;
      if (run.assign[static_cast<std::size_t>(i)] != best) {
        run.assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    run.history.push_back(inertia);
    run.inertia = inertia;
    if (!changed) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::int64_t i = 0; i < m; ++i) {
      const int c = run.assign[static_cast<std::size_t>(i)];
      ++counts[static_cast<std::size_t>(c)];
      double* s = sums.data() + c * d;
      const double* p = pts + i * d;
      for (std::int64_t j = 0; j < d; ++j) s[j] += p[j];
    }
    for (std::int64_t c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // Reseed an empty cluster to the point farthest from its centroid.
        std::int64_t far = 0;
        double fd = -1;
        for (std::int64_t i = 0; i < m; ++i) {
          const double d2 =
              sqdist(pts + i * d, run.centroids.row(run.assign[static_cast<std::size_t>(i)]), d);
          if (d2 > fd) {
            fd = d2;
            far = i;
          }
        }
        std::copy(pts + far * d, pts + (far + 1) * d, run.centroids.row(c));
      } else {
        double* cen = run.centroids.row(c);
        const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        const double* s = sums.data() + c * d;
        for (std::int64_t j = 0; j < d; ++j) cen[j] = s[j] * inv;
      }
    }
  }
  // Final inertia against the last centroids (covers the max-iters exit).
  double inertia = 0;
  for (std::int64_t i = 0; i < m; ++i)
    inertia += sqdist(pts + i * d, run.centroids.row(run.assign[static_cast<std::size_t>(i)]), d);
  run.inertia = inertia;
  return run;
}

}  // namespace detail

inline KmeansResult kmeans(const double* pts, std::int64_t m, std::int64_t d, std::int64_t k,
                           int restarts = 10, std::uint64_t seed = 0, std::int64_t max_iters = 300) {
  check_contract(k >= 1, "kmeans: k must be >= 1");
  if (m < k)
    throw contract_error("kmeans: m = " + std::to_string(m) + " < k = " + std::to_string(k));
  KmeansResult best;
  best.k = k;
  for (int r = 0; r < restarts; ++r) {
    Rng rng = substream(seed, "kmeans-restart-" + std::to_string(r));
    detail::LloydRun run = detail::lloyd_once(pts, m, d, k, rng, max_iters);
    if (best.best_restart < 0 || run.inertia < best.inertia) {  // ties keep the lowest restart index
      best.centroids = std::move(run.centroids);
      best.assignments = std::move(run.assign);
      best.inertia = run.inertia;
      best.inertia_history = std::move(run.history);
      best.best_restart = r;
    }
  }
  return best;
}

inline KmeansResult kmeans(const Matrix& pts, std::int64_t k, int restarts = 10,
                           std::uint64_t seed = 0) {
  return kmeans(pts.data.data(), pts.rows, pts.cols, k, restarts, seed);
}

// ---------------------------------------------------------------------------
// Optimal-assignment clustering accuracy
// ---------------------------------------------------------------------------

// Exact min-cost assignment on a square cost matrix (potentials / Jonker-style
// O(n^3)). Returns match[row] = column.
inline std::vector<int> hungarian_min_cost(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(n + 1));
  std::vector<int> p(static_cast<std::size_t>(n + 1)), way(static_cast<std::size_t>(n + 1));
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost[static_cast<std::size_t>((i0 - 1) * n + (j - 1))] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) match[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return match;
}

struct ClusterReport {
  double acc = 0;
  std::int64_t k = 0;
  std::vector<int> assignments;
  std::vector<int> mapping;  // cluster -> class, -1 when left unmapped
  std::vector<std::vector<std::int64_t>> contingency;  // k x n_classes
  double inertia = 0;
  std::uint64_t seed = 0;
};

// Best one-to-one cluster-to-class mapping via optimal assignment on the
// negated contingency table. Clusters beyond n_classes stay unmapped and
// count as errors.
inline ClusterReport clustering_accuracy(const std::vector<int>& assignments,
                                         const std::vector<int>& truth, std::int64_t k,
                                         std::int64_t n_classes) {
  check_contract(assignments.size() == truth.size(), "acc: assignment/truth size mismatch");
  check_contract(!assignments.empty(), "acc: empty input");
  const auto m = static_cast<std::int64_t>(assignments.size());
  ClusterReport rep;
  rep.k = k;
  rep.assignments = assignments;
  rep.contingency.assign(static_cast<std::size_t>(k),
                         std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0));
  for (std::int64_t i = 0; i < m; ++i) {
    const int a = assignments[static_cast<std::size_t>(i)];
    const int t = truth[static_cast<std::size_t>(i)];
    check_contract(a >= 0 && a < k, "acc: cluster index " + std::to_string(a) + " out of range");
    check_contract(t >= 0 && t < n_classes, "acc: class label " + std::to_string(t) + " out of range");
    ++rep.contingency[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)];
  }

  const int n = static_cast<int>(std::max(k, n_classes));
  std::vector<double> cost(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t a = 0; a < k; ++a)
    for (std::int64_t t = 0; t < n_classes; ++t)
      cost[static_cast<std::size_t>(a * n + t)] =
          -static_cast<double>(rep.contingency[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)]);
  const auto match = hungarian_min_cost(cost, n);

  rep.mapping.assign(static_cast<std::size_t>(k), -1);
  std::int64_t matched = 0;
  for (std::int64_t a = 0; a < k; ++a) {
    const int t = match[static_cast<std::size_t>(a)];
    if (t >= 0 && t < n_classes) {
      rep.mapping[static_cast<std::size_t>(a)] = t;
      matched += rep.contingency[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)];
    }
  }
  rep.acc = static_cast<double>(matched) / static_cast<double>(m);
  return rep;
}

// ---------------------------------------------------------------------------
// 2-D projection (PCA via Gram-free power iteration)
// ---------------------------------------------------------------------------

namespace detail {

// Deterministic unit vector orthogonal to `against` (or e0 when unused); the
// fallback when the remaining variance is numerically zero.
inline std::vector<double> complement_axis(std::int64_t d, const std::vector<double>* against) {
  for (std::int64_t axis = 0; axis < d; ++axis) {
    std::vector<double> v(static_cast<std::size_t>(d), 0.0);
    v[static_cast<std::size_t>(axis)] = 1.0;
    if (against) {
      const double dot = (*against)[static_cast<std::size_t>(axis)];
      for (std::int64_t i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] -= dot * (*against)[static_cast<std::size_t>(i)];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.5) {
      for (auto& x : v) x /= norm;
      return v;
    }
  }
  std::vector<double> v(static_cast<std::size_t>(d), 0.0);
  v[0] = 1.0;
  return v;
}

// Dominant right-singular direction via Gram-free power iteration. When
// `against` is given, the data itself is deflated first so rounding crumbs
// of the leading direction cannot re-enter.
inline std::vector<double> top_direction(const Matrix& data, const std::vector<double>* against) {
  const std::int64_t m = data.rows, d = data.cols;
  Matrix deflated;
  const Matrix* x = &data;
  if (against) {
    deflated = data;
    for (std::int64_t i = 0; i < m; ++i) {
      double* r = deflated.row(i);
      double dot = 0;
      for (std::int64_t j = 0; j < d; ++j) dot += r[j] * (*against)[static_cast<std::size_t>(j)];
      for (std::int64_t j = 0; j < d; ++j) r[j] -= dot * (*against)[static_cast<std::size_t>(j)];
    }
    x = &deflated;
  }
  double frob = 0;
  for (double v : x->data) frob += v * v;
  if (frob <= 1e-24) return complement_axis(d, against);

  Rng rng(0x9C0FFEEull);
  std::vector<double> v(static_cast<std::size_t>(d));
  for (auto& e : v) e = rng.uniform(-1, 1);
  std::vector<double> xv(static_cast<std::size_t>(m)), next(static_cast<std::size_t>(d));
  auto normalize = [](std::vector<double>& vec) {
    double norm = 0;
    for (double e : vec) norm += e * e;
    norm = std::sqrt(norm);
    if (norm <= 0) return false;
    for (auto& e : vec) e /= norm;
    return true;
  };
  normalize(v);
  for (int iter = 0; iter < 300; ++iter) {
    for (std::int64_t i = 0; i < m; ++i) {
      const double* r = x->row(i);
      double s = 0;
      for (std::int64_t j = 0; j < d; ++j) s += r[j] * v[static_cast<std::size_t>(j)];
      xv[static_cast<std::size_t>(i)] = s;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
      const double* r = x->row(i);
      const double s = xv[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < d; ++j) next[static_cast<std::size_t>(j)] += s * r[j];
    }
    double next_norm = 0;
    for (double e : next) next_norm += e * e;
    if (next_norm <= 1e-20 * frob * frob / static_cast<double>(m)) return complement_axis(d, against);
    for (auto& e : next) e /= std::sqrt(next_norm);
    double delta = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double t = next[static_cast<std::size_t>(j)] - v[static_cast<std::size_t>(j)];
      delta += t * t;
    }
    v = next;
    if (delta < 1e-24) break;
  }
  if (against) {
    // residual leading-direction leakage is rounding noise; squeeze it out
    for (int pass = 0; pass < 2; ++pass) {
      double dot = 0;
      for (std::int64_t j = 0; j < d; ++j) dot += v[static_cast<std::size_t>(j)] * (*against)[static_cast<std::size_t>(j)];
      for (std::int64_t j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] -= dot * (*against)[static_cast<std::size_t>(j)];
    }
    if (!normalize(v)) return complement_axis(d, against);
  }
  return v;
}

}  // namespace detail

// Centered projection onto the top-2 principal components.
inline Matrix project_2d(const Matrix& points) {
  check_contract(points.cols >= 2, "project_2d: need at least 2 dimensions");
  Matrix centered = points;
  std::vector<double> mean(static_cast<std::size_t>(points.cols), 0.0);
  for (std::int64_t i = 0; i < points.rows; ++i)
    for (std::int64_t j = 0; j < points.cols; ++j) mean[static_cast<std::size_t>(j)] += points.row(i)[j];
  for (auto& v : mean) v /= static_cast<double>(points.rows);
  for (std::int64_t i = 0; i < centered.rows; ++i)
    for (std::int64_t j = 0; j < centered.cols; ++j) centered.row(i)[j] -= mean[static_cast<std::size_t>(j)];

  const auto v1 = detail::top_direction(centered, nullptr);
  const auto v2 = detail::top_direction(centered, &v1);

  Matrix out;
  out.rows = points.rows;
  out.cols = 2;
  out.data.resize(static_cast<std::size_t>(out.rows * 2));
  for (std::int64_t i = 0; i < out.rows; ++i) {
    const double* r = centered.row(i);
    double a = 0, b = 0;
    for (std::int64_t j = 0; j < points.cols; ++j) {
      a += r[j] * v1[static_cast<std::size_t>(j)];
      b += r[j] * v2[static_cast<std::size_t>(j)];
    }
    out.row(i)[0] = a;
    out.row(i)[1] = b;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix persistence: binary container and CSV
// ---------------------------------------------------------------------------

constexpr char kMatrixMagic[8] = {'P', 'S', 'C', 'L', 'M', 'A', 'T', '0'};

inline void write_matrix(const std::string& path, const Matrix& mt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path + ": cannot open for writing");
  out.write(kMatrixMagic, 8);
  auto wr64 = [&](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  };
  wr64(static_cast<std::uint64_t>(mt.rows));
  wr64(static_cast<std::uint64_t>(mt.cols));
  for (double d : mt.data) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    wr64(u);
  }
  if (!out) throw io_error(path + ": write failed");
}

inline Matrix read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path + ": cannot open");
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMatrixMagic, 8) != 0)
    throw io_error(path + ": bad matrix magic");
  auto rd64 = [&]() {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw io_error(path + ": truncated matrix file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  };
  Matrix mt;
  mt.rows = static_cast<std::int64_t>(rd64());
  mt.cols = static_cast<std::int64_t>(rd64());
  mt.data.resize(static_cast<std::size_t>(mt.rows * mt.cols));
  for (auto& d : mt.data) {
    const std::uint64_t u = rd64();
    std::memcpy(&d, &u, 8);
  }
  return mt;
}

inline void write_matrix_csv(const std::string& path, const Matrix& mt) {
  std::ofstream out(path);
  if (!out) throw io_error(path + ": cannot open for writing");
  char buf[64];
  for (std::int64_t i = 0; i < mt.rows; ++i) {
    for (std::int64_t j = 0; j < mt.cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", mt.row(i)[j]);
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace pscl
