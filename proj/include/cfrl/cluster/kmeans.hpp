#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/core/error.hpp"
#include "cfrl/core/random.hpp"
#include "cfrl/numerics/tensor.hpp"

namespace cfrl::cluster {

using nn::Tensor2;
using nn::Vector;

/// k-means result over subject-level embeddings. Centroids are the group-level
/// theta substituted for every member of the group.
struct ClusterModel {
  int k = 0;
  Tensor2 centroids;  // k x d
  std::map<int, int> assignment;  // subject id -> cluster index
  double objective = 0.0;  // within-cluster sum of squares at convergence
  std::vector<double> objective_trace;  // one value per Lloyd iteration
  int iterations = 0;

  Eigen::Index dim() const { return centroids.cols(); }

  int cluster_of(int subject_id) const {
    const auto it = assignment.find(subject_id);
    if (it == assignment.end()) throw PreconditionError("subject " + std::to_string(subject_id) + " has no cluster");
    return it->second;
  }

  std::vector<int> members(int c) const {
    std::vector<int> out;
    for (const auto& [id, idx] : assignment)
      if (idx == c) out.push_back(id);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json assign = nlohmann::json::object();
    for (const auto& [id, idx] : assignment) assign[std::to_string(id)] = idx;
    return {{"k", k}, {"centroids", nn::tensor_to_json(centroids)}, {"assignment", assign},
            {"objective", objective}, {"iterations", iterations}};
  }

  static ClusterModel from_json(const nlohmann::json& j) {
    ClusterModel m;
    m.k = j.at("k").get<int>();
    m.centroids = nn::tensor_from_json(j.at("centroids"));
    if (m.centroids.rows() != m.k) throw IoError("cluster model: centroid count differs from k");
    for (const auto& [key, val] : j.at("assignment").items()) {
      const int idx = val.get<int>();
      if (idx < 0 || idx >= m.k) throw IoError("cluster model: assignment index out of range");
      m.assignment[std::stoi(key)] = idx;
    }
    m.objective = j.value("objective", 0.0);
    m.iterations = j.value("iterations", 0);
    return m;
  }
};

namespace detail {

inline double sq_dist(const Tensor2& x, Eigen::Index i, const Tensor2& c, Eigen::Index k) {
  return (x.row(i) - c.row(k)).squaredNorm();
}

inline int nearest(const Tensor2& x, Eigen::Index i, const Tensor2& c, double* best_out = nullptr) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < c.rows(); ++k) {
    const double d = sq_dist(x, i, c, k);
    if (d < bd) {  // strict: ties go to the lower index
      bd = d;
      best = static_cast<int>(k);
    }
  }
  if (best_out) *best_out = bd;
  return best;
}

/// Row order sorted lexicographically by coordinates, then by id, so the
/// result does not depend on how the caller ordered the subjects.
inline std::vector<Eigen::Index> canonical_order(const Tensor2& x, std::span<const int> ids) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    }
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  return order;
}

inline Tensor2 kmeans_pp(const Tensor2& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Tensor2 c(k, x.cols());
  c.row(0) = x.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n))));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = sq_dist(x, i, c, 0);
  for (int m = 1; m < k; ++m) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2(i);
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
    }
    c.row(m) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), sq_dist(x, i, c, m));
  }
  return c;
}

}  // namespace detail

struct KMeansOptions {
  int restarts = 10;  // independent k-means++ starts; the lowest objective wins
  int max_iterations = 300;
  double tolerance = 0.0;  // stop when the objective improves by no more than this
};

namespace detail {

inline ClusterModel lloyd(const Tensor2& x, std::span<const int> xid, int k, Rng& rng, const KMeansOptions& opt) {
  const Eigen::Index n = x.rows();
  ClusterModel m;
  m.k = k;
  m.centroids = kmeans_pp(x, k, rng);
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  Vector dist(n);

  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    bool changed = false;
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = nearest(x, i, m.centroids, &dist(i));
      changed |= c != label[static_cast<std::size_t>(i)];
      label[static_cast<std::size_t>(i)] = c;
      obj += dist(i);
    }
    m.objective_trace.push_back(obj);
    m.iterations = it + 1;
    if (it > 0 && (!changed || prev - obj <= opt.tolerance)) break;
    prev = obj;

    Tensor2 sum = Tensor2::Zero(k, x.cols());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(label[static_cast<std::size_t>(i)]) += x.row(i);
      ++count[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) {
        m.centroids.row(c) = sum.row(c) / count[static_cast<std::size_t>(c)];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      Eigen::Index far = 0;
      dist.maxCoeff(&far);
      m.centroids.row(c) = x.row(far);
      dist(far) = 0.0;
    }
  }

  m.objective = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = 0.0;
    const int c = nearest(x, i, m.centroids, &d);
    m.assignment[xid[static_cast<std::size_t>(i)]] = c;
    m.objective += d;
  }
  return m;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations, best of `opt.restarts`
/// starts. `points` holds one row per subject; ids[i] is the subject of row i.
inline ClusterModel fit_kmeans(const Tensor2& points, std::span<const int> ids, int k, std::uint64_t seed,
                               const KMeansOptions& opt = {}) {
  require(k >= 1, "fit_kmeans: k must be at least 1");
  if (static_cast<Eigen::Index>(ids.size()) != points.rows()) {
    throw DimensionError("fit_kmeans: one subject id per point required");
  }
  if (points.rows() < k) {
    throw PreconditionError("fit_kmeans: " + std::to_string(points.rows()) + " points for k = " + std::to_string(k));
  }
  if (!points.allFinite()) throw NumericalError("fit_kmeans: non-finite embedding");

  const auto order = detail::canonical_order(points, ids);
  const Eigen::Index n = points.rows();
  Tensor2 x(n, points.cols());
  std::vector<int> xid(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = points.row(order[static_cast<std::size_t>(i)]);
    xid[static_cast<std::size_t>(i)] = ids[order[static_cast<std::size_t>(i)]];
  }

  require(opt.restarts >= 1, "fit_kmeans: restarts must be at least 1");
  Rng rng(seed);
  ClusterModel best;
  for (int r = 0; r < opt.restarts; ++r) {
    auto m = detail::lloyd(x, xid, k, rng, opt);
    if (r == 0 || m.objective < best.objective) best = std::move(m);
  }
  return best;
}

/// Nearest centroid; ties go to the lowest index.
inline int assign(const ClusterModel& m, const Vector& theta) {
  if (theta.size() != m.dim()) {
    throw DimensionError("assign: theta has " + std::to_string(theta.size()) + " entries, centroids have " +
                         std::to_string(m.dim()));
  }
  const Tensor2 row = nn::row_of(theta);
  return detail::nearest(row, 0, m.centroids);
}

/// Subject-level points: mean of each subject's window embeddings, rows in
/// ascending subject id.
struct SubjectPoints {
  std::vector<int> ids;
  Tensor2 points;
};

inline SubjectPoints subject_means(const Tensor2& window_theta, std::span<const int> window_subject) {
  if (static_cast<Eigen::Index>(window_subject.size()) != window_theta.rows()) {
    throw DimensionError("subject_means: one subject per window required");
  }
  std::map<int, std::pair<Vector, int>> acc;
  for (Eigen::Index i = 0; i < window_theta.rows(); ++i) {
    auto [it, fresh] = acc.try_emplace(window_subject[static_cast<std::size_t>(i)],
                                       Vector::Zero(window_theta.cols()), 0);
    it->second.first += window_theta.row(i).transpose();
    ++it->second.second;
  }
  SubjectPoints out;
  out.points.resize(static_cast<Eigen::Index>(acc.size()), window_theta.cols());
  Eigen::Index r = 0;
  for (const auto& [id, sc] : acc) {
    out.ids.push_back(id);
    out.points.row(r++) = (sc.first / sc.second).transpose();
  }
  return out;
}

/// Minimum-cost assignment on a square cost matrix (Hungarian algorithm).
/// Returns col[row].
inline std::vector<int> hungarian(const Tensor2& cost) {
  require(cost.rows() == cost.cols(), "hungarian: cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) col[p[j] - 1] = j - 1;
  return col;
}

/// Fraction of items whose cluster matches their true label after the best
/// one-to-one relabelling of clusters. Labels are arbitrary non-negative ints.
inline double matched_agreement(std::span<const int> predicted, std::span<const int> truth) {
  require(predicted.size() == truth.size(), "matched_agreement: label vectors differ in length");
  if (predicted.empty()) return 0.0;
  std::map<int, int> pi, ti;
  for (int p : predicted) pi.try_emplace(p, static_cast<int>(pi.size()));
  for (int t : truth) ti.try_emplace(t, static_cast<int>(ti.size()));
  const auto n = static_cast<Eigen::Index>(std::max(pi.size(), ti.size()));
  Tensor2 overlap = Tensor2::Zero(n, n);
  for (std::size_t i = 0; i < predicted.size(); ++i) overlap(pi[predicted[i]], ti[truth[i]]) += 1.0;
  const auto match = hungarian(-overlap);
  double hits = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) hits += overlap(r, match[static_cast<std::size_t>(r)]);
  return hits / static_cast<double>(predicted.size());
}

/// Within-cluster sum of squares for k = 1..k_max, for an elbow read-out when
/// the number of groups is not known.
inline std::vector<double> objective_by_k(const Tensor2& points, std::span<const int> ids, int k_max,
                                          std::uint64_t seed) {
  std::vector<double> out;
  for (int k = 1; k <= std::min<int>(k_max, static_cast<int>(points.rows())); ++k) {
    out.push_back(fit_kmeans(points, ids, k, derive_seed(seed, static_cast<std::uint64_t>(k))).objective);
  }
  return out;
}

}  // namespace cfrl::cluster
