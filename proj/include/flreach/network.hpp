#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "flreach/lattice.hpp"
#include "flreach/layer_reach.hpp"

namespace flreach {

struct AffineLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

struct ReluLayer {
  Eigen::Index width = 0;
};

struct MaxPoolLayer {
  std::vector<PoolSpec> pools;
  Eigen::Index width_in = 0;
};

/// Runtime layers. Convolutions, batch norm and linear layers are lowered to
/// AffineLayer when the model is loaded.
using Layer = std::variant<AffineLayer, ReluLayer, MaxPoolLayer>;

Eigen::Index layer_width_in(const Layer& layer);
Eigen::Index layer_width_out(const Layer& layer);
inline bool is_nonlinear(const Layer& layer) { return !std::holds_alternative<AffineLayer>(layer); }

class Network {
 public:
  /// Throws std::invalid_argument if the layer widths do not chain or the
  /// output width differs from the label count. Empty labels are replaced by
  /// "0".."n-1".
  Network(Eigen::Index input_width, std::vector<Layer> layers, std::vector<std::string> labels = {});

  Eigen::Index input_width() const { return input_width_; }
  Eigen::Index output_width() const { return layer_width_out(layers_.back()); }
  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t nonlinear_count() const;

 private:
  Eigen::Index input_width_;
  std::vector<Layer> layers_;
  std::vector<std::string> labels_;
};

/// Convolution over a CHW tensor; filters are laid out [out][in][kh][kw].
struct ConvSpec {
  int in_channels = 1, in_height = 1, in_width = 1;
  int out_channels = 1, kernel_h = 1, kernel_w = 1;
  int stride = 1, pad = 0;
  std::vector<double> filters;
  std::vector<double> bias;

  int out_height() const { return (in_height + 2 * pad - kernel_h) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel_w) / stride + 1; }
};

/// Dense matrix of the convolution over the flattened CHW input (one row per
/// output element, zero padding folded in).
AffineLayer lower_conv(const ConvSpec& conv);

/// y = (x - mean) / sqrt(var + eps) * gamma + beta as a diagonal affine map of
/// the given width. Statistics of length C < width are broadcast per channel
/// over a CHW layout.
AffineLayer lower_batchnorm(const Eigen::VectorXd& mean, const Eigen::VectorXd& var,
                            const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta, double eps,
                            Eigen::Index width);

/// Model file loading (JSON, optional FLRW sidecar matrices resolved relative
/// to the model's directory). Throws std::runtime_error on I/O or parse
/// errors and std::invalid_argument on structural errors.
Network load_model(const std::filesystem::path& path);
Network parse_model(std::string_view json_text,
                    const std::filesystem::path& base_dir = std::filesystem::path("."));

/// Sidecar matrix: "FLRW", u32 rows, u32 cols, rows*cols little-endian f64
/// in row-major order.
Eigen::MatrixXd read_flrw(const std::filesystem::path& path);
void write_flrw(const std::filesystem::path& path, const Eigen::MatrixXd& m);

Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x);

/// Index of the largest logit; ties go to the lowest index.
Eigen::Index argmax(const Eigen::VectorXd& logits);

/// Gradient of one logit with respect to the input of every nonlinear layer,
/// in layer order. ReLU uses derivative 0 at exactly 0; max-pool routes the
/// gradient to the first maximal window entry.
std::vector<Eigen::VectorXd> gradient(const Network& net, const Eigen::VectorXd& x,
                                      Eigen::Index logit_index);

/// Gradient of one logit with respect to the network input.
Eigen::VectorXd input_gradient(const Network& net, const Eigen::VectorXd& x, Eigen::Index logit_index);

/// L-infinity box around a baseline on selected coordinates; all other
/// coordinates stay at the baseline.
struct InputSpec {
  Eigen::VectorXd baseline;
  std::vector<Eigen::Index> perturbed;
  double epsilon = 0.0;
  /// Optional valid value range the box is intersected with (e.g. [0, 1]
  /// for images).
  std::optional<std::pair<double, double>> clip;

  void check(Eigen::Index input_width) const;
  Eigen::VectorXd lower() const;
  Eigen::VectorXd upper() const;
};

/// Box lattice over the perturbed coordinates embedded in the full input
/// space.
LatticeSet build_input_set(const InputSpec& spec, int max_dim = kDefaultMaxBoxDim);

/// Embeds a box over `coords` into full-width vectors equal to `baseline`
/// elsewhere.
LatticeSet build_embedded_box(const Eigen::VectorXd& baseline, std::span<const Eigen::Index> coords,
                              const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                              int max_dim = kDefaultMaxBoxDim);

}  // namespace flreach
