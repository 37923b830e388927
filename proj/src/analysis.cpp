#include "flreach/analysis.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace flreach {

std::string_view status_name(Status s) {
  switch (s) {
    case Status::safe: return "SAFE";
    case Status::unsafe: return "UNSAFE";
    case Status::unknown: return "UNKNOWN";
    case Status::timeout: return "TIMEOUT";
  }
  return "UNKNOWN";
}

int exit_code(Status s) {
  switch (s) {
    case Status::safe: return 0;
    case Status::unsafe: return 1;
    case Status::unknown: return 2;
    case Status::timeout: return 3;
  }
  return 4;
}

double class_margin(const Eigen::Ref<const Eigen::VectorXd>& logits, Eigen::Index c) {
  if (c < 0 || c >= logits.size()) throw std::out_of_range("class index out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (j != c) other = std::max(other, logits(j));
  return logits(c) - other;
}

Verdict classify_result(const Network& net, const ReachResult& result, Eigen::Index c) {
  if (c < 0 || c >= net.output_width()) throw std::out_of_range("class index out of range");
  Verdict v;
  v.true_class = c;
  v.set_count = result.set_count;
  v.wall_time_s = result.wall_time_s;
  v.min_margin = std::numeric_limits<double>::infinity();
  bool violated = false, boundary = false;
  for (const auto& s : result.sets) {
    if (s.ambient_dim() != net.output_width()) throw std::invalid_argument("result sets are not in logit space");
    for (Eigen::Index r = 0; r < s.vertex_count(); ++r) {
      const Eigen::VectorXd y = s.vertices().row(r).transpose();
      const double m = class_margin(y, c);
      const double tol = kSideTolerance * std::max(1.0, y.cwiseAbs().maxCoeff());
      v.min_margin = std::min(v.min_margin, m);
      if (m > tol) continue;
      if (m >= -tol) {
        boundary = true;
        continue;
      }
      violated = true;
      if (!v.witnesses.empty()) continue;
      const Eigen::VectorXd x = s.region_vertices().row(r).transpose();
      const Eigen::Index predicted = argmax(forward(net, x));
      if (predicted != c) v.witnesses.push_back({x, predicted});
    }
  }
  if (!v.witnesses.empty()) {
    v.status = Status::unsafe;
  } else if (result.truncated) {
    v.status = Status::timeout;
  } else if (violated) {
    v.status = Status::unknown;
    v.notes.emplace_back("violating vertex found but its pre-image did not re-verify");
  } else if (result.mode == ReachMode::fast) {
    v.status = Status::unknown;
    v.notes.emplace_back("fast mode under-approximates and cannot prove safety");
  } else {
    v.status = Status::safe;
    if (boundary) v.notes.emplace_back("reachable set touches the decision boundary");
  }
  return v;
}

Verdict verify(const Network& net, const InputSpec& spec, const ReachConfig& cfg) {
  spec.check(net.input_width());
  const Eigen::Index c = argmax(forward(net, spec.baseline));
  return classify_result(net, reach(net, spec, cfg), c);
}

// ---------------------------------------------------------------------------
// Falsification

std::vector<Eigen::Index> rank_pixels(const Network& net, const Eigen::VectorXd& image, const ImageLayout& layout,
                                      Eigen::Index c) {
  if (layout.size() != net.input_width()) throw std::invalid_argument("image layout differs from the input width");
  const Eigen::VectorXd g = input_gradient(net, image, c);
  const Eigen::Index np = layout.pixels();
  std::vector<double> norm(static_cast<std::size_t>(np), 0.0);
  for (int ch = 0; ch < layout.channels; ++ch)
    for (Eigen::Index p = 0; p < np; ++p) norm[static_cast<std::size_t>(p)] += g(ch * np + p) * g(ch * np + p);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(np));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return norm[static_cast<std::size_t>(a)] > norm[static_cast<std::size_t>(b)];
  });
  return order;
}

Verdict falsify(const Network& net, const Eigen::VectorXd& image, const ImageLayout& layout,
                const FalsifyConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  if (image.size() != net.input_width()) throw std::invalid_argument("image length differs from the input width");
  if (cfg.max_pixels < 0) throw std::invalid_argument("pixel budget must be non-negative");
  const Eigen::Index c = argmax(forward(net, image));

  Verdict v;
  v.true_class = c;
  Eigen::VectorXd current = image;
  v.min_margin = class_margin(forward(net, current), c);
  const auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  const auto order = rank_pixels(net, image, layout, c);
  const int budget = std::min<int>(cfg.max_pixels, static_cast<int>(order.size()));
  for (int step = 0; step < budget; ++step) {
    if (cfg.timeout_s > 0.0 && elapsed() >= cfg.timeout_s) {
      v.status = Status::timeout;
      v.wall_time_s = elapsed();
      return v;
    }
    const auto step_start = Clock::now();
    const Eigen::Index pixel = order[static_cast<std::size_t>(step)];
    InputSpec spec;
    spec.baseline = current;
    for (int ch = 0; ch < layout.channels; ++ch) spec.perturbed.push_back(ch * layout.pixels() + pixel);
    spec.epsilon = cfg.epsilon;
    spec.clip = std::pair{0.0, 1.0};

    ReachConfig rc;
    rc.mode = ReachMode::fast;
    rc.relaxation = cfg.relaxation;
    rc.threads = cfg.threads;
    if (cfg.timeout_s > 0.0) rc.timeout_s = std::max(1e-3, cfg.timeout_s - elapsed());
    const ReachResult result = reach(net, spec, rc);

    double best = class_margin(forward(net, current), c);
    for (const auto& s : result.sets) {
      for (Eigen::Index r = 0; r < s.vertex_count(); ++r) {
        const double m = class_margin(s.vertices().row(r).transpose(), c);
        if (m < best) {
          best = m;
          current = s.region_vertices().row(r).transpose();
        }
      }
    }
    v.set_count += result.set_count;
    v.min_margin = std::min(v.min_margin, best);
    v.pixel_log.push_back({pixel, std::chrono::duration<double>(Clock::now() - step_start).count(),
                           result.set_count, best});

    const Eigen::Index predicted = argmax(forward(net, current));
    if (predicted != c) {
      v.witnesses.push_back({current, predicted});
      v.status = Status::unsafe;
      v.wall_time_s = elapsed();
      return v;
    }
    if (result.truncated && result.sets.empty()) {
      v.status = Status::timeout;
      v.wall_time_s = elapsed();
      return v;
    }
  }
  v.status = Status::unknown;
  if (budget == 0) v.notes.emplace_back("pixel budget is zero");
  else v.notes.emplace_back("no misclassification within the pixel budget");
  v.wall_time_s = elapsed();
  return v;
}

// ---------------------------------------------------------------------------
// Projection

Axis parse_axis(std::string_view text, const std::vector<std::string>& labels) {
  if (text == "second" || text == "second_highest") return {Axis::Kind::second, 0};
  std::string_view name = text;
  if (name.substr(0, 6) == "class:") name.remove_prefix(6);
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == name) return {Axis::Kind::coordinate, static_cast<Eigen::Index>(k)};
  try {
    std::size_t used = 0;
    const long long k = std::stoll(std::string(name), &used);
    if (used == name.size() && k >= 0) return {Axis::Kind::coordinate, static_cast<Eigen::Index>(k)};
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("bad projection axis '" + std::string(text) + "'");
}

namespace {

using Point = std::array<double, 2>;

double cross(const Point& o, const Point& a, const Point& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

/// Andrew's monotone chain; drops collinear points.
std::vector<Point> hull_2d(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() <= 2) return pts;
  double scale = 1.0;
  for (const auto& p : pts) scale = std::max({scale, std::abs(p[0]), std::abs(p[1])});
  const double tol = 1e-12 * scale * scale;
  std::vector<Point> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= tol) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(h[k - 2], h[k - 1], pts[i]) <= tol) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  if (h.size() < 3) return {pts.front(), pts.back()};
  return h;
}

}  // namespace

std::vector<ProjectedPoint> project_sets(std::span<const LatticeSet> sets, const Axis& x, const Axis& y) {
  if (x.kind == Axis::Kind::second && y.kind == Axis::Kind::second)
    throw std::invalid_argument("at most one projection axis can be 'second'");
  const Eigen::Index ref = x.kind == Axis::Kind::second ? y.index : x.index;
  std::vector<ProjectedPoint> out;
  for (std::size_t id = 0; id < sets.size(); ++id) {
    const VertexMatrix& v = sets[id].vertices();
    const Eigen::Index m = v.cols();
    if (ref >= m) throw std::out_of_range("projection axis outside the output width");
    Eigen::Index second = -1;
    if (x.kind == Axis::Kind::second || y.kind == Axis::Kind::second) {
      if (m < 2) throw std::invalid_argument("'second' axis needs at least two logits");
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j == ref) continue;
        const double gap = (v.col(j) - v.col(ref)).maxCoeff();
        if (gap > best) {
          best = gap;
          second = j;
        }
      }
    }
    const Eigen::Index cx = x.kind == Axis::Kind::second ? second : x.index;
    const Eigen::Index cy = y.kind == Axis::Kind::second ? second : y.index;
    std::vector<Point> pts;
    pts.reserve(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index r = 0; r < v.rows(); ++r) pts.push_back({v(r, cx), v(r, cy)});
    const auto hull = hull_2d(std::move(pts));
    for (std::size_t k = 0; k < hull.size(); ++k) out.push_back({id, k, hull[k][0], hull[k][1]});
  }
  return out;
}

void emit_projection(const ReachResult& result, const Axis& x, const Axis& y, const std::filesystem::path& path) {
  const auto rows = project_sets(result.sets, x, y);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "set_id,vertex_order,x,y\n";
  char buf[96];
  for (const auto& p : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", p.set_id, p.order, p.x, p.y);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace flreach
