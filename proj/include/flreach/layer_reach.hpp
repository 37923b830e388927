#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "flreach/lattice.hpp"

namespace flreach {

/// One max-pooling window: the input coordinates it reads and the output
/// coordinate it writes. 2x2 windows have four dims.
struct PoolSpec {
  std::vector<Eigen::Index> dims;
  Eigen::Index out_index = 0;
};

/// Which neurons (ReLU) or pool input coordinates (max-pool) are handled
/// exactly in fast mode.
struct NeuronSelection {
  std::vector<bool> selected;

  static NeuronSelection all(std::size_t n) { return {std::vector<bool>(n, true)}; }
  std::size_t size() const { return selected.size(); }
  std::size_t count() const;
  bool operator[](std::size_t i) const { return selected[i]; }
};

struct LayerCounters {
  std::atomic<std::uint64_t> splits{0};
  std::atomic<std::uint64_t> dropped{0};
};

/// Per-call knobs shared by the layer operations. A null selection means exact
/// mode.
struct LayerContext {
  const NeuronSelection* selection = nullptr;
  LayerCounters* counters = nullptr;
  int threads = 1;
};

std::vector<LatticeSet> affine_layer_reach(std::span<const LatticeSet> inputs,
                                           const Eigen::MatrixXd& W,
                                           const Eigen::VectorXd& b,
                                           const LayerContext& ctx = {});

/// ReLU layer by recursive splitting on the neurons whose hyperplane x_k = 0
/// crosses the set, lowest index first. Sets lying on the negative side of a
/// neuron are projected onto x_k = 0. In fast mode a crossing non-selected
/// neuron keeps only the child with more vertices (positive child on ties).
std::vector<LatticeSet> relu_layer_reach(std::span<const LatticeSet> inputs,
                                         const LayerContext& ctx = {});

/// A piece of a set on which one window coordinate is the maximum.
struct PoolPiece {
  LatticeSet set;
  /// Position within PoolSpec::dims of the maximal coordinate.
  int winner = 0;
};

/// Splits every input into the parts where each window coordinate is the
/// maximum, by intersecting with the halfspaces x_i - x_j >= 0 taken in the
/// order (1,2),(1,3),(2,3),(1,4),(2,4),(3,4). Ties go to the lower window
/// position. Coordinates are left in place; maxpool_layer_reach drops the
/// losers. In fast mode, pieces won by non-selected coordinates are discarded
/// unless no selected coordinate wins anywhere, in which case the piece with
/// the most vertices is kept.
std::vector<PoolPiece> maxpool_pool_reach(std::span<const LatticeSet> inputs,
                                          const PoolSpec& pool,
                                          const LayerContext& ctx = {});

/// Applies every pool in order and keeps one column per pool, the winner,
/// placed at the pool's out_index. Output width equals pools.size().
std::vector<LatticeSet> maxpool_layer_reach(std::span<const LatticeSet> inputs,
                                            std::span<const PoolSpec> pools,
                                            const LayerContext& ctx = {});

/// Throws std::invalid_argument unless the windows are non-empty, disjoint,
/// inside [0, width_in) and their out indices form a permutation of
/// 0..pools.size()-1.
void check_pools(std::span<const PoolSpec> pools, Eigen::Index width_in);

/// 2x2 stride-2 windows over a CHW feature map, output laid out CHW as well.
std::vector<PoolSpec> make_2x2_pools(int channels, int height, int width);

}  // namespace flreach
