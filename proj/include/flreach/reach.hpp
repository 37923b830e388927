#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "flreach/lattice.hpp"
#include "flreach/layer_reach.hpp"
#include "flreach/network.hpp"

namespace flreach {

enum class ReachMode { exact, fast };

struct ReachConfig {
  ReachMode mode = ReachMode::exact;
  /// Fraction of neurons per nonlinear layer handled exactly in fast mode.
  double relaxation = 1.0;
  int partitions = 1;
  /// Wall-clock budget in seconds; <= 0 disables it.
  double timeout_s = 0.0;
  std::size_t max_sets = 5'000'000;
  /// 0 = hardware concurrency.
  int threads = 1;
  int max_box_dim = kDefaultMaxBoxDim;

  void check() const;
};

struct ReachResult {
  /// Output sets in logit space, each carrying its input-space linear region.
  std::vector<LatticeSet> sets;
  std::size_t set_count = 0;
  double wall_time_s = 0.0;
  int partitions_done = 0;
  bool truncated = false;
  std::uint64_t splits = 0;
  ReachMode mode = ReachMode::exact;
  double relaxation = 1.0;
};

/// Number of neurons kept out of n for relaxation delta: round(delta * n),
/// at least one when delta > 0.
std::size_t selected_count(double delta, std::size_t n);

/// One selection per nonlinear layer, ranked by |gradient| of the predicted
/// class at the baseline (ties go to the lower index).
std::vector<NeuronSelection> select_neurons(const Network& net, const InputSpec& spec, double delta);

/// Splits [lower, upper] into `parts` boxes by repeatedly halving the widest
/// coordinate of the widest box. Returned as (lower, upper) pairs.
std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> partition_box(const Eigen::VectorXd& lower,
                                                                      const Eigen::VectorXd& upper, int parts);

/// Pushes a list of sets through every layer of the network.
std::vector<LatticeSet> propagate(const Network& net, std::vector<LatticeSet> sets,
                                  const std::vector<NeuronSelection>* selections, const LayerContext& ctx);

ReachResult reach(const Network& net, const InputSpec& spec, const ReachConfig& cfg);

/// Output-space halfspace a.y + b >= 0.
struct Constraint {
  Eigen::VectorXd normal;
  double offset = 0.0;
};

/// Parses a linear constraint over logits such as "1-0>=0", "y2>=0.5" or
/// "2*cat-dog<=1". Left-hand terms name a logit by label, by "yK" or by its
/// bare index, optionally scaled by "coef*"; the right-hand side is a
/// number. Throws std::invalid_argument on malformed input.
Constraint parse_constraint(std::string_view text, const std::vector<std::string>& labels);

/// Intersects an output set with the constraints and returns the
/// corresponding input region (vertices = region rows), or nothing if the
/// intersection is empty.
std::optional<LatticeSet> backtrack(const LatticeSet& set, std::span<const Constraint> constraints);

}  // namespace flreach
