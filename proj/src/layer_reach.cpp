#include "flreach/layer_reach.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "flreach/parallel.hpp"

namespace flreach {

std::size_t NeuronSelection::count() const {
  return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));
}

namespace {

void check_selection(const LayerContext& ctx, Eigen::Index width) {
  if (ctx.selection && static_cast<Eigen::Index>(ctx.selection->size()) != width)
    throw std::invalid_argument("neuron selection size differs from layer width");
}

void count_split(const LayerContext& ctx) {
  if (ctx.counters) ++ctx.counters->splits;
}

void count_drop(const LayerContext& ctx) {
  if (ctx.counters) ++ctx.counters->dropped;
}

/// Maps every input through fn (which appends to its own output list) and
/// concatenates the lists in input order.
template <class Fn>
std::vector<LatticeSet> map_sets(std::span<const LatticeSet> inputs, int threads, Fn&& fn) {
  std::vector<std::vector<LatticeSet>> parts(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) { fn(inputs[i], parts[i]); });
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<LatticeSet> out;
  out.reserve(total);
  for (auto& p : parts)
    for (auto& s : p) out.push_back(std::move(s));
  return out;
}

// ---------------------------------------------------------------------------
// ReLU

void relu_recurse(LatticeSet s, const std::vector<Eigen::Index>& candidates,
                  const LayerContext& ctx, std::vector<LatticeSet>& out) {
  std::vector<Eigen::Index> crossing;
  std::vector<Eigen::Index> negative;
  for (Eigen::Index k : candidates) {
    const SignSummary sum = summarize_scores(s.vertices().col(k));
    if (sum.crosses())
      crossing.push_back(k);
    else if (sum.has_neg)
      negative.push_back(k);
  }
  if (!negative.empty()) s = project_to_hyperplanes(s, negative);
  if (crossing.empty()) {
    out.push_back(std::move(s));
    return;
  }

  const Eigen::Index k = crossing.front();
  const std::vector<Eigen::Index> rest(crossing.begin() + 1, crossing.end());
  SplitResult parts = split_by_scores(s, s.vertices().col(k));
  count_split(ctx);

  std::optional<LatticeSet> pos = std::move(parts.positive);
  std::optional<LatticeSet> neg = std::move(parts.negative);
  if (pos && is_collapsed(*pos)) { pos.reset(); count_drop(ctx); }
  if (neg && is_collapsed(*neg)) { neg.reset(); count_drop(ctx); }
  if (neg) neg = project_to_hyperplane(*neg, k);

  if (ctx.selection && !(*ctx.selection)[static_cast<std::size_t>(k)] && pos && neg) {
    if (neg->vertex_count() > pos->vertex_count())
      pos.reset();
    else
      neg.reset();
  }
  if (pos) relu_recurse(std::move(*pos), rest, ctx, out);
  if (neg) relu_recurse(std::move(*neg), rest, ctx, out);
}

// ---------------------------------------------------------------------------
// Max pooling

/// Window position pairs (i, j), i < j, ordered by j then i.
std::vector<std::pair<int, int>> window_pairs(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int j = 1; j < n; ++j)
    for (int i = 0; i < j; ++i) pairs.emplace_back(i, j);
  return pairs;
}

void pool_pieces(const LatticeSet& s, const PoolSpec& pool, const LayerContext& ctx,
                 std::vector<PoolPiece>& out) {
  const int n = static_cast<int>(pool.dims.size());
  const auto pairs = window_pairs(n);
  std::vector<PoolPiece> pieces;
  for (int i = 0; i < n; ++i) {
    std::optional<LatticeSet> piece = s;
    for (auto [a, b] : pairs) {
      if (a != i && b != i) continue;
      const int j = a == i ? b : a;
      const Eigen::VectorXd diff =
          piece->vertices().col(pool.dims[i]) - piece->vertices().col(pool.dims[j]);
      const SignSummary sum = summarize_scores(diff);
      if (sum.all_zero()) {
        if (i > j) piece.reset();
      } else if (sum.crosses()) {
        SplitResult parts = split_by_scores(*piece, diff);
        count_split(ctx);
        piece = std::move(parts.positive);
        if (piece && is_collapsed(*piece)) {
          piece.reset();
          count_drop(ctx);
        }
      } else if (sum.has_neg) {
        piece.reset();
      }
      if (!piece) break;
    }
    if (piece) pieces.push_back({std::move(*piece), i});
  }

  if (ctx.selection && !pieces.empty()) {
    const auto& sel = *ctx.selection;
    std::vector<PoolPiece> kept;
    for (auto& p : pieces)
      if (sel[static_cast<std::size_t>(pool.dims[p.winner])]) kept.push_back(p);
    if (kept.empty()) {
      auto largest = std::max_element(pieces.begin(), pieces.end(), [](const auto& x, const auto& y) {
        return x.set.vertex_count() < y.set.vertex_count();
      });
      kept.push_back(std::move(*largest));
    }
    pieces = std::move(kept);
  }
  for (auto& p : pieces) out.push_back(std::move(p));
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<LatticeSet> affine_layer_reach(std::span<const LatticeSet> inputs, const Eigen::MatrixXd& W,
                                           const Eigen::VectorXd& b, const LayerContext& ctx) {
  return map_sets(inputs, ctx.threads, [&](const LatticeSet& s, std::vector<LatticeSet>& out) {
    out.push_back(affine_transform(s, W, b));
  });
}

std::vector<LatticeSet> relu_layer_reach(std::span<const LatticeSet> inputs, const LayerContext& ctx) {
  if (inputs.empty()) return {};
  const Eigen::Index width = inputs.front().ambient_dim();
  check_selection(ctx, width);
  std::vector<Eigen::Index> all(static_cast<std::size_t>(width));
  for (Eigen::Index k = 0; k < width; ++k) all[static_cast<std::size_t>(k)] = k;
  return map_sets(inputs, ctx.threads, [&](const LatticeSet& s, std::vector<LatticeSet>& out) {
    if (s.ambient_dim() != width) throw std::invalid_argument("ReLU input sets differ in width");
    relu_recurse(s, all, ctx, out);
  });
}

std::vector<PoolPiece> maxpool_pool_reach(std::span<const LatticeSet> inputs, const PoolSpec& pool,
                                          const LayerContext& ctx) {
  std::vector<PoolPiece> out;
  for (const auto& s : inputs) {
    PoolSpec alone = pool;
    alone.out_index = 0;
    check_pools(std::span<const PoolSpec>(&alone, 1), s.ambient_dim());
    check_selection(ctx, s.ambient_dim());
    pool_pieces(s, pool, ctx, out);
  }
  return out;
}

std::vector<LatticeSet> maxpool_layer_reach(std::span<const LatticeSet> inputs,
                                            std::span<const PoolSpec> pools, const LayerContext& ctx) {
  if (inputs.empty()) return {};
  const Eigen::Index width = inputs.front().ambient_dim();
  check_pools(pools, width);
  check_selection(ctx, width);

  return map_sets(inputs, ctx.threads, [&](const LatticeSet& s, std::vector<LatticeSet>& out) {
    if (s.ambient_dim() != width) throw std::invalid_argument("max-pool input sets differ in width");
    struct Tracked {
      LatticeSet set;
      std::vector<Eigen::Index> keep;  // indexed by out_index
    };
    std::vector<Tracked> current;
    current.push_back({s, std::vector<Eigen::Index>(pools.size(), -1)});
    for (const PoolSpec& pool : pools) {
      std::vector<Tracked> next;
      for (auto& t : current) {
        std::vector<PoolPiece> pieces;
        pool_pieces(t.set, pool, ctx, pieces);
        for (auto& piece : pieces) {
          Tracked child{std::move(piece.set), t.keep};
          child.keep[static_cast<std::size_t>(pool.out_index)] = pool.dims[piece.winner];
          next.push_back(std::move(child));
        }
      }
      current = std::move(next);
    }
    for (auto& t : current) out.push_back(eliminate_dims(t.set, t.keep));
  });
}

void check_pools(std::span<const PoolSpec> pools, Eigen::Index width_in) {
  if (pools.empty()) throw std::invalid_argument("max-pool layer needs at least one window");
  std::vector<char> used(static_cast<std::size_t>(std::max<Eigen::Index>(width_in, 0)), 0);
  std::vector<char> out_used(pools.size(), 0);
  for (const PoolSpec& p : pools) {
    if (p.dims.empty()) throw std::invalid_argument("empty pooling window");
    for (Eigen::Index d : p.dims) {
      if (d < 0 || d >= width_in) {
        std::ostringstream msg;
        msg << "pool coordinate " << d << " outside input width " << width_in;
        throw std::invalid_argument(msg.str());
      }
      if (used[static_cast<std::size_t>(d)]++) throw std::invalid_argument("overlapping pooling windows");
    }
    if (p.out_index < 0 || p.out_index >= static_cast<Eigen::Index>(pools.size()) ||
        out_used[static_cast<std::size_t>(p.out_index)]++)
      throw std::invalid_argument("pool out indices must be a permutation of 0..n-1");
  }
}

std::vector<PoolSpec> make_2x2_pools(int channels, int height, int width) {
  if (channels < 1 || height < 2 || width < 2)
    throw std::invalid_argument("2x2 pooling needs at least one channel and a 2x2 map");
  const int oh = height / 2, ow = width / 2;
  std::vector<PoolSpec> pools;
  pools.reserve(static_cast<std::size_t>(channels * oh * ow));
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        auto at = [&](int y, int x) { return static_cast<Eigen::Index>((c * height + y) * width + x); };
        PoolSpec p;
        p.dims = {at(2 * i, 2 * j), at(2 * i, 2 * j + 1), at(2 * i + 1, 2 * j), at(2 * i + 1, 2 * j + 1)};
        p.out_index = (c * oh + i) * ow + j;
        pools.push_back(std::move(p));
      }
  return pools;
}

}  // namespace flreach
