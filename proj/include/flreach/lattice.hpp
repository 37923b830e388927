#pragma once

// Face-lattice polytopes: a combinatorial containment DAG of faces paired
// with vertex coordinates. Affine maps only touch the coordinates; cutting
// by a hyperplane rebuilds the lattice purely combinatorially from vertex
// signs, so no convex hull or LP is ever needed.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flreach {

using VertexMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FaceId = std::int64_t;

/// Relative tolerance used when deciding which side of a hyperplane a vertex
/// lies on.
inline constexpr double kSideTolerance = 1e-9;

/// Largest box dimension build_box accepts unless told otherwise. A d-box
/// lattice has 3^d faces.
inline constexpr int kDefaultMaxBoxDim = 10;

struct FaceRecord {
  FaceId id = 0;
  int dim = 0;
  /// Row in the vertex matrix for 0-faces, -1 otherwise.
  int vertex = -1;
};

/// Dimension-graded containment DAG. Faces are stored sorted by dimension and
/// the 0-faces come first, so face index i < vertex_count() is vertex row i.
class FaceLattice {
 public:
  /// Assembles a lattice from per-face child lists (indices into `faces`).
  /// Faces may come in any order; they are re-sorted by dimension. Throws
  /// std::invalid_argument when the result fails validate().
  static FaceLattice from_children(
      const std::vector<FaceRecord>& faces,
      const std::vector<std::vector<std::uint32_t>>& children);

  /// Unchecked assembly from a dimension-sorted face list and CSR children.
  static FaceLattice from_sorted_csr(std::vector<FaceRecord> faces,
                                     std::vector<std::uint32_t> child_offsets,
                                     std::vector<std::uint32_t> child_index);

  std::size_t size() const { return faces_.size(); }
  std::size_t vertex_count() const { return level_offsets_[1]; }
  int top_dim() const { return static_cast<int>(level_offsets_.size()) - 2; }
  std::uint32_t top() const {
    return static_cast<std::uint32_t>(faces_.size() - 1);
  }

  const FaceRecord& face(std::uint32_t f) const { return faces_[f]; }
  const std::vector<FaceRecord>& faces() const { return faces_; }

  std::span<const std::uint32_t> children(std::uint32_t f) const {
    return {child_index_.data() + child_offsets_[f],
            child_index_.data() + child_offsets_[f + 1]};
  }
  std::span<const std::uint32_t> parents(std::uint32_t f) const {
    return {parent_index_.data() + parent_offsets_[f],
            parent_index_.data() + parent_offsets_[f + 1]};
  }

  /// Half-open index range of the k-faces.
  std::uint32_t level_begin(int k) const { return level_offsets_[k]; }
  std::uint32_t level_end(int k) const { return level_offsets_[k + 1]; }

  /// Number of faces of each dimension 0..top_dim.
  std::vector<std::size_t> face_counts() const;

  FaceId max_id() const;

  /// Structural check: single top, graded edges, mutual parent/child
  /// consistency, >= 2 children above level 0, everything below the top.
  /// Returns a description of the first problem found.
  std::optional<std::string> validate() const;

 private:
  FaceLattice() = default;
  void index_parents_and_levels();

  std::vector<FaceRecord> faces_;
  std::vector<std::uint32_t> child_offsets_{0};
  std::vector<std::uint32_t> child_index_;
  std::vector<std::uint32_t> parent_offsets_;
  std::vector<std::uint32_t> parent_index_;
  std::vector<std::uint32_t> level_offsets_;
};

/// A polytope in the current layer's space together with its linear region:
/// row i of region_vertices() is the network-input pre-image of row i of
/// vertices(). Immutable; every operation returns a new set and lattices are
/// shared between sets that did not change combinatorially.
class LatticeSet {
 public:
  LatticeSet(std::shared_ptr<const FaceLattice> lattice, VertexMatrix vertices,
             VertexMatrix region_vertices, FaceId next_face_id);

  const FaceLattice& lattice() const { return *lattice_; }
  const std::shared_ptr<const FaceLattice>& lattice_ptr() const {
    return lattice_;
  }
  const VertexMatrix& vertices() const { return vertices_; }
  const VertexMatrix& region_vertices() const { return region_; }
  FaceId next_face_id() const { return next_id_; }

  Eigen::Index ambient_dim() const { return vertices_.cols(); }
  Eigen::Index vertex_count() const { return vertices_.rows(); }
  int top_dim() const { return lattice_->top_dim(); }

 private:
  std::shared_ptr<const FaceLattice> lattice_;
  VertexMatrix vertices_;
  VertexMatrix region_;
  FaceId next_id_;
};

/// a.x + b = 0.
struct Hyperplane {
  Eigen::VectorXd normal;
  double offset = 0.0;

  Hyperplane(Eigen::VectorXd normal, double offset);

  /// x_k = 0 in an m-dimensional space.
  static Hyperplane axis(Eigen::Index m, Eigen::Index k);
  /// x_i - x_j = 0 in an m-dimensional space.
  static Hyperplane difference(Eigen::Index m, Eigen::Index i, Eigen::Index j);

  double eval(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return normal.dot(x) + offset;
  }
};

enum class Side : std::int8_t { negative = -1, zero = 0, positive = 1 };

struct VertexClassification {
  std::vector<Side> labels;
  bool has_pos = false;
  bool has_neg = false;
};

/// Labels each vertex from its score a.v (plus offset b). A vertex is zero
/// when |a.v + b| <= kSideTolerance * max(1, |a.v| + |b|).
VertexClassification classify_scores(const Eigen::Ref<const Eigen::VectorXd>& products,
                                     double offset = 0.0);
VertexClassification classify_vertices(const LatticeSet& s, const Hyperplane& h);

/// has_pos / has_neg of classify_scores without materializing the labels.
struct SignSummary {
  bool has_pos = false;
  bool has_neg = false;
  bool crosses() const { return has_pos && has_neg; }
  bool all_zero() const { return !has_pos && !has_neg; }
};
SignSummary summarize_scores(const Eigen::Ref<const Eigen::VectorXd>& products,
                             double offset = 0.0);

struct SplitResult {
  std::optional<LatticeSet> positive;
  std::optional<LatticeSet> negative;
  /// Vertices created by cutting edges (zero unless the set was cut).
  std::size_t new_vertices = 0;
};

SplitResult split_by_hyperplane(const LatticeSet& s, const Hyperplane& h);

/// Same as split_by_hyperplane with the per-vertex products a.v supplied by
/// the caller (used for axis and coordinate-difference hyperplanes).
SplitResult split_by_scores(const LatticeSet& s,
                            const Eigen::Ref<const Eigen::VectorXd>& products,
                            double offset = 0.0);

LatticeSet build_box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                     int max_dim = kDefaultMaxBoxDim);

/// The (n-1)-simplex spanned by n points (rows); 2^n - 1 faces.
LatticeSet build_simplex(const VertexMatrix& points);

LatticeSet affine_transform(const LatticeSet& s, const Eigen::MatrixXd& W,
                            const Eigen::VectorXd& b);

LatticeSet project_to_hyperplane(const LatticeSet& s, Eigen::Index coord);
/// Zeroes several coordinates at once.
LatticeSet project_to_hyperplanes(const LatticeSet& s,
                                  std::span<const Eigen::Index> coords);

/// Output column i is input column keep[i].
LatticeSet eliminate_dims(const LatticeSet& s, std::span<const Eigen::Index> keep);

/// True when the set has no vertices, or has positive combinatorial dimension
/// but all of its vertices coincide within tolerance.
bool is_collapsed(const LatticeSet& s);

}  // namespace flreach
