#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "flreach/network.hpp"
#include "flreach/reach.hpp"

namespace flreach {

enum class Status { safe, unsafe, unknown, timeout };

std::string_view status_name(Status s);
/// Process exit code for a verdict: 0 SAFE, 1 UNSAFE, 2 UNKNOWN, 3 TIMEOUT.
int exit_code(Status s);

struct Witness {
  Eigen::VectorXd input;
  Eigen::Index predicted = 0;
};

/// Wall time and outcome of one falsification step.
struct PixelStep {
  Eigen::Index pixel = 0;
  double wall_time_s = 0.0;
  std::size_t set_count = 0;
  double margin = 0.0;
};

struct Verdict {
  Status status = Status::unknown;
  Eigen::Index true_class = 0;
  std::vector<Witness> witnesses;
  std::size_t set_count = 0;
  double wall_time_s = 0.0;
  /// Smallest vertex margin v_c - max_{j != c} v_j seen.
  double min_margin = 0.0;
  std::vector<std::string> notes;
  std::vector<PixelStep> pixel_log;
};

/// Margin of the class-c logit over the best other logit.
double class_margin(const Eigen::Ref<const Eigen::VectorXd>& logits, Eigen::Index c);

/// Verdict from an already computed reach result for class c.
Verdict classify_result(const Network& net, const ReachResult& result, Eigen::Index c);

/// Runs reach on the input box and checks every output vertex. The class is the
/// baseline's prediction.
Verdict verify(const Network& net, const InputSpec& spec, const ReachConfig& cfg);

struct ImageLayout {
  int channels = 1, height = 1, width = 1;
  Eigen::Index size() const { return static_cast<Eigen::Index>(channels) * height * width; }
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
};

struct FalsifyConfig {
  double epsilon = 1.0;
  double relaxation = 0.01;
  int max_pixels = 10;
  double timeout_s = 0.0;
  int threads = 1;
};

/// Pixels ordered by the L2 norm over channels of the class-c input gradient,
/// largest first (ties go to the lower pixel index).
std::vector<Eigen::Index> rank_pixels(const Network& net, const Eigen::VectorXd& image, const ImageLayout& layout,
                                      Eigen::Index c);

/// Pixel-by-pixel fast-reach attack. Each step perturbs all channels of the
/// next ranked pixel by +-epsilon (clipped to [0, 1]), moves to the region
/// pre-image of the lowest-margin output vertex and stops once the image is
/// misclassified.
Verdict falsify(const Network& net, const Eigen::VectorXd& image, const ImageLayout& layout,
                const FalsifyConfig& cfg);

/// Projection axis: a logit coordinate or the strongest competitor of a
/// reference class.
struct Axis {
  enum class Kind { coordinate, second } kind = Kind::coordinate;
  Eigen::Index index = 0;
};

/// Accepts "3", "class:3", "second" and "second_highest".
Axis parse_axis(std::string_view text, const std::vector<std::string>& labels = {});

struct ProjectedPoint {
  std::size_t set_id = 0;
  std::size_t order = 0;
  double x = 0.0, y = 0.0;
};

/// 2-D convex hull (counter-clockwise) of every set's projected vertices.
/// Collinear projections give their two extreme points, coincident ones a
/// single point. A "second" axis uses, per set, the class j != c whose logit
/// comes closest to (or exceeds) the reference class c given by the other
/// axis.
std::vector<ProjectedPoint> project_sets(std::span<const LatticeSet> sets, const Axis& x, const Axis& y);

/// Writes project_sets as CSV with header set_id,vertex_order,x,y.
void emit_projection(const ReachResult& result, const Axis& x, const Axis& y, const std::filesystem::path& path);

}  // namespace flreach
