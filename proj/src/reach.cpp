#include "flreach/reach.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "flreach/parallel.hpp"

namespace flreach {

void ReachConfig::check() const {
  if (!(relaxation >= 0.0 && relaxation <= 1.0)) throw std::invalid_argument("relaxation must lie in [0, 1]");
  if (partitions < 1) throw std::invalid_argument("partitions must be at least 1");
  if (max_sets < 1) throw std::invalid_argument("max_sets must be at least 1");
}

std::size_t selected_count(double delta, std::size_t n) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("relaxation must lie in [0, 1]");
  if (delta == 0.0 || n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::llround(delta * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<NeuronSelection> select_neurons(const Network& net, const InputSpec& spec, double delta) {
  spec.check(net.input_width());
  const Eigen::Index c = argmax(forward(net, spec.baseline));
  const auto grads = gradient(net, spec.baseline, c);
  std::vector<NeuronSelection> out;
  out.reserve(grads.size());
  for (const auto& g : grads) {
    const auto n = static_cast<std::size_t>(g.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(g(static_cast<Eigen::Index>(a))) > std::abs(g(static_cast<Eigen::Index>(b)));
    });
    NeuronSelection sel{std::vector<bool>(n, false)};
    const std::size_t k = selected_count(delta, n);
    for (std::size_t i = 0; i < k; ++i) sel.selected[order[i]] = true;
    out.push_back(std::move(sel));
  }
  return out;
}

std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> partition_box(const Eigen::VectorXd& lower,
                                                                      const Eigen::VectorXd& upper, int parts) {
  if (parts < 1) throw std::invalid_argument("partition count must be at least 1");
  if (lower.size() != upper.size()) throw std::invalid_argument("box bounds differ in length");
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> boxes{{lower, upper}};
  while (static_cast<int>(boxes.size()) < parts) {
    std::size_t widest = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const double w = lower.size() ? (boxes[i].second - boxes[i].first).maxCoeff() : 0.0;
      if (w > best) {
        best = w;
        widest = i;
      }
    }
    if (best <= 0.0) break;  // nothing left to bisect
    auto [lo, hi] = boxes[widest];
    Eigen::Index axis = 0;
    (hi - lo).maxCoeff(&axis);
    const double mid = 0.5 * (lo(axis) + hi(axis));
    Eigen::VectorXd hi_left = hi, lo_right = lo;
    hi_left(axis) = mid;
    lo_right(axis) = mid;
    boxes[widest] = {lo, hi_left};
    boxes.insert(boxes.begin() + static_cast<std::ptrdiff_t>(widest) + 1, {lo_right, hi});
  }
  return boxes;
}

namespace {

using Clock = std::chrono::steady_clock;

/// Applies one layer; `nonlinear_index` counts the nonlinear layers seen so
/// far and selects the fast-mode selection.
std::vector<LatticeSet> apply_layer(const Layer& layer, std::span<const LatticeSet> sets,
                                    const std::vector<NeuronSelection>* selections, std::size_t nonlinear_index,
                                    LayerContext ctx) {
  if (selections && is_nonlinear(layer)) ctx.selection = &(*selections)[nonlinear_index];
  return std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AffineLayer>) return affine_layer_reach(sets, l.W, l.b, ctx);
        else if constexpr (std::is_same_v<T, ReluLayer>) return relu_layer_reach(sets, ctx);
        else return maxpool_layer_reach(sets, l.pools, ctx);
      },
      layer);
}

}  // namespace

std::vector<LatticeSet> propagate(const Network& net, std::vector<LatticeSet> sets,
                                  const std::vector<NeuronSelection>* selections, const LayerContext& ctx) {
  if (selections && selections->size() != net.nonlinear_count())
    throw std::invalid_argument("one neuron selection per nonlinear layer is required");
  std::size_t nonlinear = 0;
  for (const auto& layer : net.layers()) {
    sets = apply_layer(layer, sets, selections, nonlinear, ctx);
    nonlinear += is_nonlinear(layer);
  }
  return sets;
}

ReachResult reach(const Network& net, const InputSpec& spec, const ReachConfig& cfg) {
  cfg.check();
  spec.check(net.input_width());
  const auto start = Clock::now();
  const bool has_deadline = cfg.timeout_s > 0.0;
  const auto deadline = start + std::chrono::duration_cast<Clock::duration>(
                                    std::chrono::duration<double>(has_deadline ? cfg.timeout_s : 0.0));

  ReachResult result;
  result.mode = cfg.mode;
  result.relaxation = cfg.mode == ReachMode::exact ? 1.0 : cfg.relaxation;

  std::vector<NeuronSelection> selections;
  if (cfg.mode == ReachMode::fast) selections = select_neurons(net, spec, cfg.relaxation);
  const auto* sel = cfg.mode == ReachMode::fast ? &selections : nullptr;

  const auto boxes = partition_box(spec.lower(), spec.upper(), cfg.partitions);
  const int threads = resolve_threads(cfg.threads);
  const int outer = std::min<int>(threads, static_cast<int>(boxes.size()));
  LayerCounters counters;
  LayerContext ctx{nullptr, &counters, std::max(1, threads / std::max(1, outer))};

  std::atomic<bool> stop{false};
  std::atomic<std::size_t> live_sets{0};
  std::vector<std::optional<std::vector<LatticeSet>>> done(boxes.size());

  parallel_for(boxes.size(), outer, [&](std::size_t p) {
    if (stop) return;
    std::vector<LatticeSet> sets{
        build_embedded_box(spec.baseline, spec.perturbed, boxes[p].first, boxes[p].second, cfg.max_box_dim)};
    std::size_t counted = 1;
    live_sets += counted;
    std::size_t nonlinear = 0;
    for (const auto& layer : net.layers()) {
      sets = apply_layer(layer, sets, sel, nonlinear, ctx);
      nonlinear += is_nonlinear(layer);
      live_sets += sets.size();
      live_sets -= counted;
      counted = sets.size();
      if (stop || (has_deadline && Clock::now() > deadline) || live_sets > cfg.max_sets) {
        stop = true;
        live_sets -= counted;
        return;
      }
    }
    done[p] = std::move(sets);
  });

  for (auto& part : done) {
    if (!part) continue;
    ++result.partitions_done;
    for (auto& s : *part) result.sets.push_back(std::move(s));
  }
  result.truncated = stop.load();
  result.set_count = result.sets.size();
  result.splits = counters.splits;
  result.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Backtracking

namespace {

struct Cursor {
  std::string_view s;
  std::size_t i = 0;

  void skip() {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  }
  bool done() {
    skip();
    return i >= s.size();
  }
  bool eat(std::string_view tok) {
    skip();
    if (s.substr(i, tok.size()) != tok) return false;
    i += tok.size();
    return true;
  }
  std::optional<double> number() {
    skip();
    double v = 0.0;
    const char* begin = s.data() + i;
    auto [end, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (ec != std::errc() || end == begin) return std::nullopt;
    i += static_cast<std::size_t>(end - begin);
    return v;
  }
  std::string_view word() {
    skip();
    const std::size_t b = i;
    while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' || s[i] == '.')) ++i;
    return s.substr(b, i - b);
  }
};

Eigen::Index logit_index(std::string_view name, const std::vector<std::string>& labels) {
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == name) return static_cast<Eigen::Index>(k);
  std::string_view digits = name;
  if (!digits.empty() && digits.front() == 'y') digits.remove_prefix(1);
  Eigen::Index k = -1;
  auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
  if (ec != std::errc() || end != digits.data() + digits.size() || k < 0 ||
      k >= static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("unknown logit '" + std::string(name) + "'");
  return k;
}

}  // namespace

Constraint parse_constraint(std::string_view text, const std::vector<std::string>& labels) {
  const auto fail = [&](const char* why) {
    throw std::invalid_argument("bad constraint '" + std::string(text) + "': " + why);
  };
  Constraint c{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(labels.size())), 0.0};
  Cursor cur{text};
  bool first = true;
  for (;;) {
    double sign = 1.0;
    if (cur.eat("+")) sign = 1.0;
    else if (cur.eat("-")) sign = -1.0;
    else if (!first) break;
    first = false;
    double coef = 1.0;
    const std::size_t mark = cur.i;
    if (auto n = cur.number(); n && cur.eat("*")) coef = *n;
    else cur.i = mark;
    const std::string_view name = cur.word();
    if (name.empty()) fail("expected a logit");
    c.normal(logit_index(name, labels)) += sign * coef;
  }
  double dir = 0.0;
  if (cur.eat(">=")) dir = 1.0;
  else if (cur.eat("<=")) dir = -1.0;
  else fail("expected >= or <=");
  const auto rhs = cur.number();
  if (!rhs) fail("expected a number on the right-hand side");
  if (!cur.done()) fail("trailing characters");
  c.normal *= dir;
  c.offset = -dir * *rhs;
  if (c.normal.isZero()) fail("constraint has no logit terms");
  return c;
}

std::optional<LatticeSet> backtrack(const LatticeSet& set, std::span<const Constraint> constraints) {
  std::optional<LatticeSet> cur = set;
  for (const auto& c : constraints) {
    if (c.normal.size() != set.ambient_dim()) throw std::invalid_argument("constraint width differs from the set");
    const Eigen::VectorXd products = cur->vertices() * c.normal;
    SplitResult parts = split_by_scores(*cur, products, c.offset);
    if (!parts.positive) return std::nullopt;
    cur = std::move(parts.positive);
  }
  return LatticeSet(cur->lattice_ptr(), cur->region_vertices(), cur->region_vertices(), cur->next_face_id());
}

}  // namespace flreach
