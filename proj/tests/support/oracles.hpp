#pragma once

// Independent reference implementations used only by the tests: brute-force
// convex hull face enumeration, an LP point-in-hull test, random networks and
// membership checks against reach results.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "flreach/lattice.hpp"
#include "flreach/network.hpp"
#include "flreach/reach.hpp"

namespace oracle {

using flreach::VertexMatrix;
using Eigen::Index;

inline int affine_rank(const Eigen::MatrixXd& pts, const std::vector<int>& idx, double tol = 1e-9) {
  if (idx.size() <= 1) return 0;
  Eigen::MatrixXd d(static_cast<Index>(idx.size()) - 1, pts.cols());
  for (std::size_t i = 1; i < idx.size(); ++i) d.row(static_cast<Index>(i) - 1) = pts.row(idx[i]) - pts.row(idx[0]);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(d);
  const auto& s = svd.singularValues();
  const double scale = std::max(1.0, s.size() ? s(0) : 0.0);
  int r = 0;
  for (Index i = 0; i < s.size(); ++i) r += s(i) > tol * scale;
  return r;
}

/// Distinct rows (within tol).
inline Eigen::MatrixXd unique_rows(const Eigen::MatrixXd& pts, double tol = 1e-9) {
  std::vector<Index> keep;
  for (Index i = 0; i < pts.rows(); ++i) {
    bool dup = false;
    for (Index k : keep) dup = dup || (pts.row(i) - pts.row(k)).cwiseAbs().maxCoeff() <= tol;
    if (!dup) keep.push_back(i);
  }
  Eigen::MatrixXd out(static_cast<Index>(keep.size()), pts.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = pts.row(keep[i]);
  return out;
}

/// Face counts per dimension of conv(pts), found by enumerating supporting
/// hyperplanes through affinely independent point subsets and closing the
/// facets under intersection. Exponential; for small point clouds only.
inline std::vector<std::size_t> hull_face_counts(const Eigen::MatrixXd& raw, double tol = 1e-9) {
  const Eigen::MatrixXd all = unique_rows(raw, tol);
  const Index n = all.rows();
  std::vector<int> every(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) every[static_cast<std::size_t>(i)] = static_cast<int>(i);
  const int d = affine_rank(all, every);
  if (d == 0) return {1};

  // Coordinates in the affine hull.
  Eigen::MatrixXd centered = all.rowwise() - all.row(0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::MatrixXd pts = centered * svd.matrixV().leftCols(d);

  std::set<std::vector<int>> facets;
  std::vector<int> pick(static_cast<std::size_t>(d));
  std::function<void(int, int)> choose = [&](int start, int depth) {
    if (depth == d) {
      if (affine_rank(pts, pick) != d - 1) return;
      Eigen::MatrixXd diff(d - 1, d);
      for (int i = 1; i < d; ++i) diff.row(i - 1) = pts.row(pick[i]) - pts.row(pick[0]);
      Eigen::VectorXd normal;
      if (d == 1) {
        normal = Eigen::VectorXd::Ones(1);
      } else {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(diff);
        normal = lu.kernel().col(0);
      }
      normal.normalize();
      const double off = normal.dot(pts.row(pick[0]).transpose());
      bool above = false, below = false;
      std::vector<int> on;
      double scale = 1.0;
      for (Index i = 0; i < n; ++i) scale = std::max(scale, pts.row(i).cwiseAbs().maxCoeff());
      for (Index i = 0; i < n; ++i) {
        const double v = normal.dot(pts.row(i).transpose()) - off;
        if (v > tol * scale) above = true;
        else if (v < -tol * scale) below = true;
        else on.push_back(static_cast<int>(i));
      }
      if (!(above && below)) facets.insert(on);
      return;
    }
    for (int i = start; i < n; ++i) {
      pick[static_cast<std::size_t>(depth)] = i;
      choose(i + 1, depth + 1);
    }
  };
  choose(0, 0);

  std::set<std::vector<int>> faces(facets.begin(), facets.end());
  std::vector<std::vector<int>> frontier(facets.begin(), facets.end());
  while (!frontier.empty()) {
    std::vector<std::vector<int>> next;
    for (const auto& a : frontier)
      for (const auto& b : facets) {
        std::vector<int> meet;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(meet));
        if (!meet.empty() && faces.insert(meet).second) next.push_back(meet);
      }
    frontier = std::move(next);
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(d) + 1, 0);
  counts[static_cast<std::size_t>(d)] = 1;
  for (const auto& f : faces) ++counts[static_cast<std::size_t>(affine_rank(pts, f))];
  return counts;
}

/// Barycentric weights expressing x as a convex combination of the rows of
/// V, or nothing if x is outside conv(V). Dense phase-1 simplex with Bland's
/// rule.
inline std::optional<Eigen::VectorXd> convex_weights(const Eigen::MatrixXd& V, const Eigen::VectorXd& x,
                                                     double tol = 1e-9) {
  const Index k = V.rows(), m = V.cols() + 1;
  // Rows: V^T lambda = x, 1^T lambda = 1; columns: lambda, artificials, rhs.
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m + 1, k + m + 1);
  for (Index r = 0; r < m; ++r) {
    double rhs = r < m - 1 ? x(r) : 1.0;
    for (Index c = 0; c < k; ++c) T(r, c) = r < m - 1 ? V(c, r) : 1.0;
    if (rhs < 0) {
      T.row(r).head(k) *= -1.0;
      rhs = -rhs;
    }
    T(r, k + r) = 1.0;
    T(r, k + m) = rhs;
  }
  // Objective: minimize sum of artificials -> reduced costs row.
  for (Index r = 0; r < m; ++r) T.row(m) -= T.row(r);
  for (Index r = 0; r < m; ++r) T(m, k + r) = 0.0;
  std::vector<Index> basis(static_cast<std::size_t>(m));
  for (Index r = 0; r < m; ++r) basis[static_cast<std::size_t>(r)] = k + r;
  const double scale = std::max(1.0, std::max(V.cwiseAbs().maxCoeff(), x.cwiseAbs().maxCoeff()));
  const double eps = 1e-12 * scale;
  for (int iter = 0; iter < 10000; ++iter) {
    Index enter = -1;
    for (Index c = 0; c < k + m; ++c)
      if (T(m, c) < -eps) {
        enter = c;
        break;
      }
    if (enter < 0) break;
    Index leave = -1;
    double best = 0.0;
    for (Index r = 0; r < m; ++r) {
      if (T(r, enter) > eps) {
        const double ratio = T(r, k + m) / T(r, enter);
        if (leave < 0 || ratio < best - 1e-15 ||
            (std::abs(ratio - best) <= 1e-15 && basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)])) {
          leave = r;
          best = ratio;
        }
      }
    }
    if (leave < 0) return std::nullopt;  // unbounded cannot happen here
    T.row(leave) /= T(leave, enter);
    for (Index r = 0; r <= m; ++r)
      if (r != leave && T(r, enter) != 0.0) T.row(r) -= T(r, enter) * T.row(leave);
    basis[static_cast<std::size_t>(leave)] = enter;
  }
  if (-T(m, k + m) > tol * scale) return std::nullopt;
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(k);
  for (Index r = 0; r < m; ++r)
    if (basis[static_cast<std::size_t>(r)] < k) lambda(basis[static_cast<std::size_t>(r)]) = T(r, k + m);
  if ((V.transpose() * lambda - x).cwiseAbs().maxCoeff() > 1e-7 * scale) return std::nullopt;
  return lambda;
}

inline bool in_bbox(const VertexMatrix& V, const Eigen::VectorXd& x, double tol) {
  for (Index c = 0; c < V.cols(); ++c)
    if (x(c) < V.col(c).minCoeff() - tol || x(c) > V.col(c).maxCoeff() + tol) return false;
  return true;
}

/// True when some output set's linear region contains x and maps x to y
/// (the interpolated vertex image) within tol.
inline bool covered(const std::vector<flreach::LatticeSet>& sets, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                    double tol = 1e-6) {
  for (const auto& s : sets) {
    if (!in_bbox(s.region_vertices(), x, 1e-9)) continue;
    const auto lambda = convex_weights(s.region_vertices(), x);
    if (!lambda) continue;
    const Eigen::VectorXd image = s.vertices().transpose() * *lambda;
    if ((image - y).cwiseAbs().maxCoeff() <= tol) return true;
  }
  return false;
}

/// True when y is a convex combination of some set's vertices.
inline bool in_union(const std::vector<flreach::LatticeSet>& sets, const Eigen::VectorXd& y, double tol = 1e-7) {
  for (const auto& s : sets) {
    if (!in_bbox(s.vertices(), y, tol)) continue;
    if (convex_weights(s.vertices(), y, tol)) return true;
  }
  return false;
}

struct ToyNetShape {
  int inputs = 2;
  std::vector<int> hidden;
  bool maxpool = false;
  int logits = 2;
};

/// Random affine/ReLU stack; with maxpool a single 4-wide window is appended
/// after the last hidden ReLU (which is widened to at least 4).
inline flreach::Network random_net(std::mt19937_64& rng, const ToyNetShape& shape) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<flreach::Layer> layers;
  Index width = shape.inputs;
  auto dense = [&](Index out) {
    flreach::AffineLayer a{Eigen::MatrixXd(out, width), Eigen::VectorXd(out)};
    for (Index r = 0; r < out; ++r) {
      for (Index c = 0; c < width; ++c) a.W(r, c) = g(rng);
      a.b(r) = 0.3 * g(rng);
    }
    layers.emplace_back(std::move(a));
    width = out;
  };
  for (int h : shape.hidden) {
    dense(h);
    layers.emplace_back(flreach::ReluLayer{width});
  }
  if (shape.maxpool) {
    // Window over the first four coordinates; the rest pass through as
    // singleton windows.
    if (width < 4) {
      dense(4);
      layers.emplace_back(flreach::ReluLayer{width});
    }
    flreach::MaxPoolLayer m;
    m.width_in = width;
    m.pools.push_back({{0, 1, 2, 3}, 0});
    for (Index i = 4; i < width; ++i) m.pools.push_back({{i}, i - 3});
    width = static_cast<Index>(m.pools.size());
    layers.emplace_back(std::move(m));
  }
  dense(shape.logits);
  return flreach::Network(shape.inputs, std::move(layers));
}

/// Greedy tolerance matching of two lists of vertex matrices, ignoring order.
inline bool same_vertex_multiset(const std::vector<flreach::LatticeSet>& a, const std::vector<flreach::LatticeSet>& b,
                                 double tol = 1e-9) {
  if (a.size() != b.size()) return false;
  auto canon = [](const VertexMatrix& v) {
    std::vector<std::vector<double>> rows;
    for (Index r = 0; r < v.rows(); ++r) rows.emplace_back(v.row(r).data(), v.row(r).data() + v.cols());
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  auto close = [&](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x[i].size(); ++j)
        if (std::abs(x[i][j] - y[i][j]) > tol) return false;
    return true;
  };
  std::vector<std::vector<std::vector<double>>> cb;
  for (const auto& s : b) cb.push_back(canon(s.vertices()));
  std::vector<char> used(b.size(), 0);
  for (const auto& s : a) {
    const auto ca = canon(s.vertices());
    bool found = false;
    for (std::size_t j = 0; j < cb.size() && !found; ++j)
      if (!used[j] && close(ca, cb[j])) used[j] = found = true;
    if (!found) return false;
  }
  return true;
}

}  // namespace oracle
