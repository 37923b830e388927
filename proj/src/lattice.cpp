#include "flreach/lattice.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace flreach {

namespace {

constexpr std::uint8_t kPos = 1;
constexpr std::uint8_t kNeg = 2;
constexpr std::uint8_t kZero = 4;

std::uint8_t side_bit(Side s) {
  switch (s) {
    case Side::positive: return kPos;
    case Side::negative: return kNeg;
    default: return kZero;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// FaceLattice

FaceLattice FaceLattice::from_sorted_csr(std::vector<FaceRecord> faces,
                                         std::vector<std::uint32_t> child_offsets,
                                         std::vector<std::uint32_t> child_index) {
  if (faces.empty()) throw std::invalid_argument("face lattice needs at least one face");
  FaceLattice l;
  l.faces_ = std::move(faces);
  l.child_offsets_ = std::move(child_offsets);
  l.child_index_ = std::move(child_index);
  l.index_parents_and_levels();
  return l;
}

FaceLattice FaceLattice::from_children(
    const std::vector<FaceRecord>& faces,
    const std::vector<std::vector<std::uint32_t>>& children) {
  if (faces.empty()) throw std::invalid_argument("face lattice needs at least one face");
  if (children.size() != faces.size())
    throw std::invalid_argument("children list size differs from face count");

  std::vector<std::uint32_t> order(faces.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (faces[a].dim != faces[b].dim) return faces[a].dim < faces[b].dim;
    if (faces[a].dim == 0) return faces[a].vertex < faces[b].vertex;
    return false;
  });
  std::vector<std::uint32_t> where(faces.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) where[order[i]] = i;

  std::vector<FaceRecord> sorted;
  sorted.reserve(faces.size());
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> index;
  for (std::uint32_t i : order) {
    sorted.push_back(faces[i]);
    for (std::uint32_t c : children[i]) {
      if (c >= faces.size()) throw std::invalid_argument("child index out of range");
      index.push_back(where[c]);
    }
    offsets.push_back(static_cast<std::uint32_t>(index.size()));
  }
  FaceLattice l = from_sorted_csr(std::move(sorted), std::move(offsets), std::move(index));
  if (auto problem = l.validate()) throw std::invalid_argument("invalid face lattice: " + *problem);
  return l;
}

void FaceLattice::index_parents_and_levels() {
  const std::size_t n = faces_.size();
  parent_offsets_.assign(n + 1, 0);
  for (std::uint32_t c : child_index_) ++parent_offsets_[c + 1];
  for (std::size_t i = 0; i < n; ++i) parent_offsets_[i + 1] += parent_offsets_[i];
  parent_index_.assign(child_index_.size(), 0);
  std::vector<std::uint32_t> fill(parent_offsets_.begin(), parent_offsets_.end() - 1);
  for (std::uint32_t f = 0; f < n; ++f)
    for (std::uint32_t k = child_offsets_[f]; k < child_offsets_[f + 1]; ++k)
      parent_index_[fill[child_index_[k]]++] = f;

  const int top = std::max(0, faces_.back().dim);
  level_offsets_.assign(static_cast<std::size_t>(top) + 2, 0);
  for (const auto& face : faces_)
    if (face.dim >= 0 && face.dim <= top) ++level_offsets_[face.dim + 1];
  for (int k = 0; k <= top; ++k) level_offsets_[k + 1] += level_offsets_[k];
}

std::vector<std::size_t> FaceLattice::face_counts() const {
  std::vector<std::size_t> counts;
  for (int k = 0; k <= top_dim(); ++k) counts.push_back(level_end(k) - level_begin(k));
  return counts;
}

FaceId FaceLattice::max_id() const {
  FaceId m = 0;
  for (const auto& f : faces_) m = std::max(m, f.id);
  return m;
}

std::optional<std::string> FaceLattice::validate() const {
  std::ostringstream why;
  const std::size_t n = faces_.size();
  if (n == 0) return "empty lattice";
  if (child_offsets_.size() != n + 1) return "child offsets size mismatch";

  std::unordered_set<FaceId> ids;
  for (std::uint32_t f = 0; f < n; ++f) {
    const FaceRecord& face = faces_[f];
    if (f > 0 && faces_[f - 1].dim > face.dim) return "faces not sorted by dimension";
    if (face.dim < 0) return "negative face dimension";
    if (!ids.insert(face.id).second) {
      why << "duplicate face id " << face.id;
      return why.str();
    }
    if (face.dim == 0 && face.vertex != static_cast<int>(f)) {
      why << "0-face " << f << " has vertex index " << face.vertex;
      return why.str();
    }
    if (face.dim > 0 && face.vertex != -1) return "k-face with k > 0 carries a vertex index";

    auto kids = children(f);
    if (face.dim == 0 && !kids.empty()) return "0-face with children";
    if (face.dim > 0 && kids.size() < 2) {
      why << face.dim << "-face id " << face.id << " has " << kids.size() << " children";
      return why.str();
    }
    std::vector<std::uint32_t> seen(kids.begin(), kids.end());
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) return "repeated child";
    for (std::uint32_t c : kids) {
      if (c >= n) return "child index out of range";
      if (faces_[c].dim != face.dim - 1) {
        why << "edge between dimensions " << face.dim << " and " << faces_[c].dim;
        return why.str();
      }
      auto ps = parents(c);
      if (std::find(ps.begin(), ps.end(), f) == ps.end()) return "parent list misses a containing face";
    }
    for (std::uint32_t p : parents(f)) {
      if (p >= n) return "parent index out of range";
      auto ks = children(p);
      if (std::find(ks.begin(), ks.end(), f) == ks.end()) return "child list misses a contained face";
    }
    if (f + 1 < n && parents(f).empty()) {
      why << face.dim << "-face id " << face.id << " is not contained in any face";
      return why.str();
    }
  }
  if (faces_.back().dim != top_dim()) return "top face dimension mismatch";
  if (level_end(top_dim()) - level_begin(top_dim()) != 1) return "more than one top face";
  if (!parents(top()).empty()) return "top face has parents";
  // Every non-top face has a parent one level up, so all faces reach the top.
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// LatticeSet / Hyperplane

LatticeSet::LatticeSet(std::shared_ptr<const FaceLattice> lattice, VertexMatrix vertices,
                       VertexMatrix region_vertices, FaceId next_face_id)
    : lattice_(std::move(lattice)),
      vertices_(std::move(vertices)),
      region_(std::move(region_vertices)),
      next_id_(next_face_id) {
  if (!lattice_) throw std::invalid_argument("lattice set without a lattice");
  const auto nv = static_cast<Eigen::Index>(lattice_->vertex_count());
  if (vertices_.rows() != nv || region_.rows() != nv)
    throw std::invalid_argument("vertex rows do not match the lattice's 0-faces");
}

Hyperplane::Hyperplane(Eigen::VectorXd n, double b) : normal(std::move(n)), offset(b) {
  if (normal.size() == 0 || normal.isZero(0.0))
    throw std::invalid_argument("hyperplane normal must be nonzero");
}

Hyperplane Hyperplane::axis(Eigen::Index m, Eigen::Index k) {
  if (k < 0 || k >= m) throw std::out_of_range("axis index out of range");
  Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
  a(k) = 1.0;
  return {std::move(a), 0.0};
}

Hyperplane Hyperplane::difference(Eigen::Index m, Eigen::Index i, Eigen::Index j) {
  if (i < 0 || i >= m || j < 0 || j >= m || i == j)
    throw std::out_of_range("invalid coordinate pair for difference hyperplane");
  Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
  a(i) = 1.0;
  a(j) = -1.0;
  return {std::move(a), 0.0};
}

// ---------------------------------------------------------------------------
// Classification and split

VertexClassification classify_scores(const Eigen::Ref<const Eigen::VectorXd>& products,
                                     double offset) {
  VertexClassification out;
  out.labels.resize(static_cast<std::size_t>(products.size()));
  for (Eigen::Index i = 0; i < products.size(); ++i) {
    const double value = products(i) + offset;
    const double tol = kSideTolerance * std::max(1.0, std::abs(products(i)) + std::abs(offset));
    Side side = Side::zero;
    if (value > tol) {
      side = Side::positive;
      out.has_pos = true;
    } else if (value < -tol) {
      side = Side::negative;
      out.has_neg = true;
    }
    out.labels[static_cast<std::size_t>(i)] = side;
  }
  return out;
}

SignSummary summarize_scores(const Eigen::Ref<const Eigen::VectorXd>& products, double offset) {
  SignSummary out;
  for (Eigen::Index i = 0; i < products.size(); ++i) {
    const double value = products(i) + offset;
    const double tol = kSideTolerance * std::max(1.0, std::abs(products(i)) + std::abs(offset));
    if (value > tol) out.has_pos = true;
    else if (value < -tol) out.has_neg = true;
    if (out.has_pos && out.has_neg) break;
  }
  return out;
}

VertexClassification classify_vertices(const LatticeSet& s, const Hyperplane& h) {
  if (h.normal.size() != s.ambient_dim())
    throw std::invalid_argument("hyperplane dimension differs from the set's ambient dimension");
  const Eigen::VectorXd products = s.vertices() * h.normal;
  return classify_scores(products, h.offset);
}

SplitResult split_by_hyperplane(const LatticeSet& s, const Hyperplane& h) {
  if (h.normal.size() != s.ambient_dim())
    throw std::invalid_argument("hyperplane dimension differs from the set's ambient dimension");
  const Eigen::VectorXd products = s.vertices() * h.normal;
  return split_by_scores(s, products, h.offset);
}

SplitResult split_by_scores(const LatticeSet& s,
                            const Eigen::Ref<const Eigen::VectorXd>& products,
                            double offset) {
  if (products.size() != s.vertex_count())
    throw std::invalid_argument("one score per vertex required");
  const VertexClassification cls = classify_scores(products, offset);
  // Also covers the all-zero set, which goes to the positive side.
  if (!cls.has_neg) return {s, std::nullopt, 0};
  if (!cls.has_pos) return {std::nullopt, s, 0};

  const FaceLattice& lat = s.lattice();
  const auto n_faces = static_cast<std::uint32_t>(lat.size());
  const auto n_verts = static_cast<std::uint32_t>(lat.vertex_count());
  const int top = lat.top_dim();

  // Which vertex signs each face contains.
  std::vector<std::uint8_t> mask(n_faces, 0);
  for (std::uint32_t v = 0; v < n_verts; ++v) mask[v] = side_bit(cls.labels[v]);
  for (std::uint32_t f = n_verts; f < n_faces; ++f)
    for (std::uint32_t c : lat.children(f)) mask[f] |= mask[c];

  auto crossing = [&](std::uint32_t f) { return (mask[f] & (kPos | kNeg)) == (kPos | kNeg); };
  auto all_zero = [&](std::uint32_t f) { return mask[f] == kZero; };

  // Faces cut through their relative interior; each yields one new face a
  // dimension lower, shared by both outputs.
  std::vector<std::int32_t> cut_ordinal(n_faces, -1);
  std::int32_t n_cut = 0;
  for (std::uint32_t f = n_verts; f < n_faces; ++f)
    if (crossing(f)) cut_ordinal[f] = n_cut++;

  // New vertices: one per cut edge, by interpolation along the edge.
  const std::uint32_t edge_begin = top >= 1 ? lat.level_begin(1) : n_faces;
  const std::uint32_t edge_end = top >= 1 ? lat.level_end(1) : n_faces;
  std::vector<std::int32_t> new_vertex_of_edge(n_faces, -1);
  std::vector<std::uint32_t> cut_edges;
  for (std::uint32_t e = edge_begin; e < edge_end; ++e) {
    if (!crossing(e)) continue;
    new_vertex_of_edge[e] = static_cast<std::int32_t>(cut_edges.size());
    cut_edges.push_back(e);
  }
  const Eigen::Index m = s.ambient_dim();
  const Eigen::Index r = s.region_vertices().cols();
  VertexMatrix cut_points(static_cast<Eigen::Index>(cut_edges.size()), m);
  VertexMatrix cut_region(static_cast<Eigen::Index>(cut_edges.size()), r);
  for (std::size_t k = 0; k < cut_edges.size(); ++k) {
    auto ends = lat.children(cut_edges[k]);
    std::uint32_t vp = ends[0], vn = ends[1];
    if (cls.labels[vp] != Side::positive) std::swap(vp, vn);
    const double fp = products(vp) + offset;
    const double fn = products(vn) + offset;
    const double denom = fp - fn;  // > 2 * tolerance given the labels
    const double t = denom > 0.0 ? std::clamp(-fn / denom, 0.0, 1.0) : 0.5;
    const auto row = static_cast<Eigen::Index>(k);
    cut_points.row(row) = s.vertices().row(vn) + t * (s.vertices().row(vp) - s.vertices().row(vn));
    cut_region.row(row) =
        s.region_vertices().row(vn) + t * (s.region_vertices().row(vp) - s.region_vertices().row(vn));
  }

  std::vector<std::uint32_t> stamp(n_faces, UINT32_MAX);

  auto build_side = [&](std::uint8_t side) {
    auto keep = [&](std::uint32_t f) { return (mask[f] & side) != 0 || all_zero(f); };

    std::vector<std::int32_t> pos_kept(n_faces, -1);
    std::vector<std::int32_t> pos_cut(n_faces, -1);
    std::vector<FaceRecord> records;
    // Sources of the face records, in order: >= 0 original face, < 0 cut face.
    std::vector<std::int64_t> source;
    records.reserve(n_faces + static_cast<std::size_t>(n_cut));
    int vertex_row = 0;
    for (int d = 0; d <= top; ++d) {
      for (std::uint32_t f = lat.level_begin(d); f < lat.level_end(d); ++f) {
        if (!keep(f)) continue;
        pos_kept[f] = static_cast<std::int32_t>(records.size());
        records.push_back({lat.face(f).id, d, d == 0 ? vertex_row++ : -1});
        source.push_back(f);
      }
      if (d + 1 > top) continue;
      for (std::uint32_t g = lat.level_begin(d + 1); g < lat.level_end(d + 1); ++g) {
        if (cut_ordinal[g] < 0) continue;
        pos_cut[g] = static_cast<std::int32_t>(records.size());
        records.push_back({s.next_face_id() + cut_ordinal[g], d, d == 0 ? vertex_row++ : -1});
        source.push_back(-1 - static_cast<std::int64_t>(g));
      }
    }

    std::vector<std::uint32_t> offsets{0};
    std::vector<std::uint32_t> index;
    offsets.reserve(records.size() + 1);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (source[i] >= 0) {
        const auto f = static_cast<std::uint32_t>(source[i]);
        for (std::uint32_t c : lat.children(f))
          if (pos_kept[c] >= 0) index.push_back(static_cast<std::uint32_t>(pos_kept[c]));
        if (pos_cut[f] >= 0) index.push_back(static_cast<std::uint32_t>(pos_cut[f]));
      } else {
        const auto g = static_cast<std::uint32_t>(-1 - source[i]);
        for (std::uint32_t c : lat.children(g))
          if (pos_cut[c] >= 0) index.push_back(static_cast<std::uint32_t>(pos_cut[c]));
        // Faces lying entirely in the hyperplane two levels below g bound g's cut.
        if (lat.face(g).dim >= 2) {
          for (std::uint32_t c : lat.children(g)) {
            for (std::uint32_t z : lat.children(c)) {
              if (!all_zero(z) || stamp[z] == g) continue;
              stamp[z] = g;
              index.push_back(static_cast<std::uint32_t>(pos_kept[z]));
            }
          }
        }
      }
      offsets.push_back(static_cast<std::uint32_t>(index.size()));
    }

    VertexMatrix verts(vertex_row, m);
    VertexMatrix region(vertex_row, r);
    for (std::size_t i = 0; i < records.size() && records[i].dim == 0; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (source[i] >= 0) {
        verts.row(row) = s.vertices().row(source[i]);
        region.row(row) = s.region_vertices().row(source[i]);
      } else {
        const auto e = static_cast<std::uint32_t>(-1 - source[i]);
        verts.row(row) = cut_points.row(new_vertex_of_edge[e]);
        region.row(row) = cut_region.row(new_vertex_of_edge[e]);
      }
    }
    auto out = std::make_shared<const FaceLattice>(
        FaceLattice::from_sorted_csr(std::move(records), std::move(offsets), std::move(index)));
    return LatticeSet(std::move(out), std::move(verts), std::move(region),
                      s.next_face_id() + n_cut);
  };

  SplitResult result;
  result.positive = build_side(kPos);
  std::fill(stamp.begin(), stamp.end(), UINT32_MAX);
  result.negative = build_side(kNeg);
  result.new_vertices = cut_edges.size();
  return result;
}

// ---------------------------------------------------------------------------
// Constructors

LatticeSet build_box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, int max_dim) {
  if (lower.size() != upper.size()) throw std::invalid_argument("box bounds differ in length");
  const auto d = static_cast<int>(lower.size());
  if (d > max_dim) {
    std::ostringstream msg;
    msg << "box dimension " << d << " exceeds the limit of " << max_dim;
    throw std::invalid_argument(msg.str());
  }
  for (int i = 0; i < d; ++i)
    if (!(lower(i) <= upper(i))) throw std::invalid_argument("box lower bound exceeds upper bound");

  // Each face is a tag in {low, high, free}^d, encoded base 3 (0, 1, 2).
  std::vector<std::uint32_t> pow3(static_cast<std::size_t>(d) + 1, 1);
  for (int i = 0; i < d; ++i) pow3[i + 1] = pow3[i] * 3;
  const std::uint32_t n = pow3[d];

  std::vector<int> dim_of(n, 0);
  for (std::uint32_t code = 0; code < n; ++code) {
    std::uint32_t c = code;
    for (int i = 0; i < d; ++i, c /= 3) dim_of[code] += (c % 3 == 2);
  }
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return dim_of[a] < dim_of[b]; });
  std::vector<std::uint32_t> pos(n);
  for (std::uint32_t i = 0; i < n; ++i) pos[order[i]] = i;

  std::vector<FaceRecord> faces(n);
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> index;
  offsets.reserve(n + 1);
  const auto n_verts = static_cast<Eigen::Index>(1) << d;
  VertexMatrix verts(n_verts, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t code = order[i];
    faces[i] = {static_cast<FaceId>(i), dim_of[code], dim_of[code] == 0 ? static_cast<int>(i) : -1};
    std::uint32_t c = code;
    for (int axis = 0; axis < d; ++axis, c /= 3) {
      const std::uint32_t tag = c % 3;
      if (tag == 2) {
        index.push_back(pos[code - 2 * pow3[axis]]);
        index.push_back(pos[code - pow3[axis]]);
      } else if (dim_of[code] == 0) {
        verts(i, axis) = tag == 0 ? lower(axis) : upper(axis);
      }
    }
    offsets.push_back(static_cast<std::uint32_t>(index.size()));
  }
  auto lattice = std::make_shared<const FaceLattice>(
      FaceLattice::from_sorted_csr(std::move(faces), std::move(offsets), std::move(index)));
  VertexMatrix region = verts;
  return LatticeSet(std::move(lattice), std::move(verts), std::move(region), static_cast<FaceId>(n));
}

LatticeSet build_simplex(const VertexMatrix& points) {
  const auto n = static_cast<int>(points.rows());
  if (n < 1 || n > 20) throw std::invalid_argument("simplex needs between 1 and 20 points");
  const std::uint32_t subsets = (1u << n) - 1;  // nonempty subsets, as bitmasks 1..subsets
  std::vector<FaceRecord> faces;
  std::vector<std::vector<std::uint32_t>> children;
  faces.reserve(subsets);
  for (std::uint32_t mask = 1; mask <= subsets; ++mask) {
    const int k = std::popcount(mask) - 1;
    faces.push_back({static_cast<FaceId>(mask - 1), k, k == 0 ? std::countr_zero(mask) : -1});
    std::vector<std::uint32_t> kids;
    if (k > 0)
      for (int b = 0; b < n; ++b)
        if (mask & (1u << b)) kids.push_back((mask & ~(1u << b)) - 1);
    children.push_back(std::move(kids));
  }
  auto lattice = std::make_shared<const FaceLattice>(FaceLattice::from_children(faces, children));
  return LatticeSet(std::move(lattice), points, points, static_cast<FaceId>(subsets));
}

// ---------------------------------------------------------------------------
// Coordinate maps

LatticeSet affine_transform(const LatticeSet& s, const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  if (W.cols() != s.ambient_dim())
    throw std::invalid_argument("affine map column count differs from the set's dimension");
  if (b.size() != W.rows()) throw std::invalid_argument("affine bias length differs from row count");
  VertexMatrix out = s.vertices() * W.transpose();
  out.rowwise() += b.transpose();
  return LatticeSet(s.lattice_ptr(), std::move(out), s.region_vertices(), s.next_face_id());
}

LatticeSet project_to_hyperplane(const LatticeSet& s, Eigen::Index coord) {
  const Eigen::Index c[] = {coord};
  return project_to_hyperplanes(s, c);
}

LatticeSet project_to_hyperplanes(const LatticeSet& s, std::span<const Eigen::Index> coords) {
  VertexMatrix out = s.vertices();
  for (Eigen::Index c : coords) {
    if (c < 0 || c >= s.ambient_dim()) throw std::out_of_range("projection coordinate out of range");
    out.col(c).setZero();
  }
  return LatticeSet(s.lattice_ptr(), std::move(out), s.region_vertices(), s.next_face_id());
}

LatticeSet eliminate_dims(const LatticeSet& s, std::span<const Eigen::Index> keep) {
  if (keep.empty()) throw std::invalid_argument("eliminate_dims needs at least one kept coordinate");
  std::vector<char> used(static_cast<std::size_t>(s.ambient_dim()), 0);
  VertexMatrix out(s.vertex_count(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const Eigen::Index c = keep[i];
    if (c < 0 || c >= s.ambient_dim()) throw std::out_of_range("kept coordinate out of range");
    if (used[c]++) throw std::invalid_argument("kept coordinate listed twice");
    out.col(static_cast<Eigen::Index>(i)) = s.vertices().col(c);
  }
  return LatticeSet(s.lattice_ptr(), std::move(out), s.region_vertices(), s.next_face_id());
}

bool is_collapsed(const LatticeSet& s) {
  if (s.vertex_count() == 0) return true;
  if (s.top_dim() == 0) return false;
  const auto first = s.vertices().row(0);
  const double scale = std::max(1.0, first.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 1; i < s.vertex_count(); ++i)
    if ((s.vertices().row(i) - first).cwiseAbs().maxCoeff() > kSideTolerance * scale) return false;
  return true;
}

}  // namespace flreach
