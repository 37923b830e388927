#include "flreach/network.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace flreach {

using nlohmann::json;

Eigen::Index layer_width_in(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> Eigen::Index {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AffineLayer>) return l.W.cols();
        else if constexpr (std::is_same_v<T, ReluLayer>) return l.width;
        else return l.width_in;
      },
      layer);
}

Eigen::Index layer_width_out(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> Eigen::Index {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AffineLayer>) return l.W.rows();
        else if constexpr (std::is_same_v<T, ReluLayer>) return l.width;
        else return static_cast<Eigen::Index>(l.pools.size());
      },
      layer);
}

Network::Network(Eigen::Index input_width, std::vector<Layer> layers, std::vector<std::string> labels)
    : input_width_(input_width), layers_(std::move(layers)), labels_(std::move(labels)) {
  if (layers_.empty()) throw std::invalid_argument("network has no layers");
  if (input_width_ < 1) throw std::invalid_argument("network input width must be positive");
  Eigen::Index width = input_width_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layer_width_in(layers_[i]) != width) {
      std::ostringstream msg;
      msg << "layer " << i << " expects width " << layer_width_in(layers_[i]) << " but receives " << width;
      throw std::invalid_argument(msg.str());
    }
    if (const auto* a = std::get_if<AffineLayer>(&layers_[i]); a && a->b.size() != a->W.rows())
      throw std::invalid_argument("affine bias length differs from its row count");
    if (const auto* m = std::get_if<MaxPoolLayer>(&layers_[i])) check_pools(m->pools, m->width_in);
    width = layer_width_out(layers_[i]);
  }
  if (labels_.empty())
    for (Eigen::Index i = 0; i < width; ++i) labels_.push_back(std::to_string(i));
  if (static_cast<Eigen::Index>(labels_.size()) != width)
    throw std::invalid_argument("label count differs from the network's output width");
}

std::size_t Network::nonlinear_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += is_nonlinear(l);
  return n;
}

// ---------------------------------------------------------------------------
// Lowering

AffineLayer lower_conv(const ConvSpec& c) {
  if (c.in_channels < 1 || c.in_height < 1 || c.in_width < 1 || c.out_channels < 1 || c.kernel_h < 1 ||
      c.kernel_w < 1 || c.stride < 1 || c.pad < 0)
    throw std::invalid_argument("invalid convolution shape");
  const std::size_t expect =
      static_cast<std::size_t>(c.out_channels) * c.in_channels * c.kernel_h * c.kernel_w;
  if (c.filters.size() != expect) throw std::invalid_argument("convolution filter size mismatch");
  if (!c.bias.empty() && c.bias.size() != static_cast<std::size_t>(c.out_channels))
    throw std::invalid_argument("convolution bias size mismatch");
  const int oh = c.out_height(), ow = c.out_width();
  if (oh < 1 || ow < 1) throw std::invalid_argument("convolution kernel larger than padded input");

  AffineLayer out;
  out.W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.out_channels) * oh * ow,
                                static_cast<Eigen::Index>(c.in_channels) * c.in_height * c.in_width);
  out.b = Eigen::VectorXd::Zero(out.W.rows());
  for (int k = 0; k < c.out_channels; ++k) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const Eigen::Index row = (static_cast<Eigen::Index>(k) * oh + y) * ow + x;
        out.b(row) = c.bias.empty() ? 0.0 : c.bias[static_cast<std::size_t>(k)];
        for (int ch = 0; ch < c.in_channels; ++ch) {
          for (int i = 0; i < c.kernel_h; ++i) {
            const int iy = y * c.stride + i - c.pad;
            if (iy < 0 || iy >= c.in_height) continue;
            for (int j = 0; j < c.kernel_w; ++j) {
              const int ix = x * c.stride + j - c.pad;
              if (ix < 0 || ix >= c.in_width) continue;
              const std::size_t w = ((static_cast<std::size_t>(k) * c.in_channels + ch) * c.kernel_h + i) *
                                        c.kernel_w + j;
              out.W(row, (static_cast<Eigen::Index>(ch) * c.in_height + iy) * c.in_width + ix) += c.filters[w];
            }
          }
        }
      }
    }
  }
  return out;
}

AffineLayer lower_batchnorm(const Eigen::VectorXd& mean, const Eigen::VectorXd& var,
                            const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta, double eps,
                            Eigen::Index width) {
  const Eigen::Index c = mean.size();
  if (c == 0 || var.size() != c || gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("batch-norm statistics differ in length");
  if (width % c != 0) throw std::invalid_argument("batch-norm channel count does not divide the width");
  const Eigen::Index per_channel = width / c;
  AffineLayer out;
  out.W = Eigen::MatrixXd::Zero(width, width);
  out.b = Eigen::VectorXd::Zero(width);
  for (Eigen::Index i = 0; i < width; ++i) {
    const Eigen::Index ch = i / per_channel;
    if (var(ch) + eps <= 0.0) throw std::invalid_argument("batch-norm variance plus eps must be positive");
    const double scale = gamma(ch) / std::sqrt(var(ch) + eps);
    out.W(i, i) = scale;
    out.b(i) = beta(ch) - mean(ch) * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model files

namespace {

Eigen::VectorXd to_vector(const json& j, const char* what) {
  if (!j.is_array()) throw std::runtime_error(std::string(what) + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Eigen::MatrixXd to_matrix(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw std::runtime_error(std::string(what) + " must be a nonempty 2-D array");
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw std::runtime_error(std::string(what) + " rows differ in length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

void flatten_into(const json& j, std::vector<double>& out, std::vector<std::size_t>& shape, std::size_t depth) {
  if (j.is_array()) {
    if (shape.size() <= depth) shape.push_back(j.size());
    else if (shape[depth] != j.size()) throw std::runtime_error("ragged conv filter array");
    for (const auto& e : j) flatten_into(e, out, shape, depth + 1);
  } else {
    if (depth != shape.size()) throw std::runtime_error("ragged conv filter array");
    out.push_back(j.get<double>());
  }
}

/// Appends a lowered affine map, folding it into a directly preceding affine
/// layer.
void push_affine(std::vector<Layer>& layers, AffineLayer a, bool fold) {
  if (fold && !layers.empty()) {
    if (auto* prev = std::get_if<AffineLayer>(&layers.back())) {
      prev->b = a.W * prev->b + a.b;
      prev->W = a.W * prev->W;
      return;
    }
  }
  layers.emplace_back(std::move(a));
}

void check_declared_widths(const json& spec, Eigen::Index in, Eigen::Index out, std::size_t index) {
  auto fail = [&](const char* which, Eigen::Index expect, Eigen::Index got) {
    std::ostringstream msg;
    msg << "layer " << index << " declares " << which << " " << got << " but the chain gives " << expect;
    throw std::invalid_argument(msg.str());
  };
  if (spec.contains("width_in") && spec["width_in"].get<Eigen::Index>() != in)
    fail("width_in", in, spec["width_in"].get<Eigen::Index>());
  if (spec.contains("width_out") && spec["width_out"].get<Eigen::Index>() != out)
    fail("width_out", out, spec["width_out"].get<Eigen::Index>());
}

}  // namespace

Network parse_model(std::string_view json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model parse error: ") + e.what());
  }
  try {
    const auto input_width = doc.at("input_width").get<Eigen::Index>();
    std::vector<std::string> labels;
    if (doc.contains("labels")) labels = doc["labels"].get<std::vector<std::string>>();

    std::vector<Layer> layers;
    Eigen::Index width = input_width;
    const auto& specs = doc.at("layers");
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const json& spec = specs[i];
      const auto kind = spec.at("kind").get<std::string>();
      const Eigen::Index in = width;
      if (kind == "affine" || kind == "affine_ref") {
        AffineLayer a;
        a.W = kind == "affine" ? to_matrix(spec.at("W"), "W")
                               : read_flrw(base_dir / spec.at("file").get<std::string>());
        a.b = spec.contains("b") ? to_vector(spec["b"], "b") : Eigen::VectorXd::Zero(a.W.rows());
        if (a.W.cols() != width || a.b.size() != a.W.rows()) {
          std::ostringstream msg;
          msg << "layer " << i << ": affine map is " << a.W.rows() << "x" << a.W.cols() << " with bias "
              << a.b.size() << ", input width " << width;
          throw std::invalid_argument(msg.str());
        }
        width = a.W.rows();
        layers.emplace_back(std::move(a));
      } else if (kind == "relu") {
        layers.emplace_back(ReluLayer{width});
      } else if (kind == "maxpool") {
        MaxPoolLayer m;
        m.width_in = width;
        if (spec.contains("pools")) {
          for (const auto& p : spec["pools"])
            m.pools.push_back({p.at("dims").get<std::vector<Eigen::Index>>(), p.at("out").get<Eigen::Index>()});
        } else {
          const auto shape = spec.at("in_shape").get<std::vector<int>>();
          if (shape.size() != 3) throw std::runtime_error("maxpool in_shape must be [c, h, w]");
          m.pools = make_2x2_pools(shape[0], shape[1], shape[2]);
        }
        check_pools(m.pools, width);
        width = static_cast<Eigen::Index>(m.pools.size());
        layers.emplace_back(std::move(m));
      } else if (kind == "conv") {
        ConvSpec c;
        const auto shape = spec.at("in_shape").get<std::vector<int>>();
        if (shape.size() != 3) throw std::runtime_error("conv in_shape must be [c, h, w]");
        c.in_channels = shape[0];
        c.in_height = shape[1];
        c.in_width = shape[2];
        std::vector<std::size_t> fshape;
        flatten_into(spec.at("filters"), c.filters, fshape, 0);
        if (fshape.size() != 4) throw std::runtime_error("conv filters must be a 4-D array");
        c.out_channels = static_cast<int>(fshape[0]);
        if (static_cast<int>(fshape[1]) != c.in_channels)
          throw std::invalid_argument("conv filter channel count differs from in_shape");
        c.kernel_h = static_cast<int>(fshape[2]);
        c.kernel_w = static_cast<int>(fshape[3]);
        if (spec.contains("bias")) c.bias = spec["bias"].get<std::vector<double>>();
        c.stride = spec.value("stride", 1);
        c.pad = spec.value("pad", 0);
        if (static_cast<Eigen::Index>(c.in_channels) * c.in_height * c.in_width != width)
          throw std::invalid_argument("conv in_shape does not match the incoming width");
        AffineLayer a = lower_conv(c);
        width = a.W.rows();
        layers.emplace_back(std::move(a));
      } else if (kind == "batchnorm") {
        AffineLayer a = lower_batchnorm(to_vector(spec.at("mean"), "mean"), to_vector(spec.at("var"), "var"),
                                        to_vector(spec.at("gamma"), "gamma"), to_vector(spec.at("beta"), "beta"),
                                        spec.value("eps", 1e-5), width);
        push_affine(layers, std::move(a), true);
      } else {
        throw std::invalid_argument("unsupported layer kind '" + kind + "'");
      }
      check_declared_widths(spec, in, width, i);
    }
    return Network(input_width, std::move(layers), std::move(labels));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model format error: ") + e.what());
  }
}

Network load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str(), path.parent_path());
}

namespace {

template <class T>
T from_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <class T>
void put_le(std::ostream& out, T v) {
  auto* b = reinterpret_cast<unsigned char*>(&v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

}  // namespace

Eigen::MatrixXd read_flrw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open matrix file " + path.string());
  unsigned char header[12];
  if (!in.read(reinterpret_cast<char*>(header), 12) || std::memcmp(header, "FLRW", 4) != 0)
    throw std::runtime_error("bad FLRW header in " + path.string());
  const auto rows = from_le<std::uint32_t>(header + 4);
  const auto cols = from_le<std::uint32_t>(header + 8);
  std::vector<unsigned char> data(static_cast<std::size_t>(rows) * cols * 8);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size())))
    throw std::runtime_error("truncated FLRW payload in " + path.string());
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      m(r, c) = from_le<double>(data.data() + (static_cast<std::size_t>(r) * cols + c) * 8);
  return m;
}

void write_flrw(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write matrix file " + path.string());
  out.write("FLRW", 4);
  put_le(out, static_cast<std::uint32_t>(m.rows()));
  put_le(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_le(out, m(r, c));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

Eigen::VectorXd apply_layer(const Layer& layer, const Eigen::VectorXd& x) {
  return std::visit(
      [&](const auto& l) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AffineLayer>) {
          return l.W * x + l.b;
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return x.cwiseMax(0.0);
        } else {
          Eigen::VectorXd y(static_cast<Eigen::Index>(l.pools.size()));
          for (const auto& p : l.pools) {
            double best = x(p.dims.front());
            for (Eigen::Index d : p.dims) best = std::max(best, x(d));
            y(p.out_index) = best;
          }
          return y;
        }
      },
      layer);
}

}  // namespace

Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_width()) throw std::invalid_argument("input length differs from the network width");
  Eigen::VectorXd h = x;
  for (const auto& layer : net.layers()) h = apply_layer(layer, h);
  return h;
}

Eigen::Index argmax(const Eigen::VectorXd& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return best;
}

namespace {

/// Back-propagates e_logit, returning the gradient at every layer input.
std::vector<Eigen::VectorXd> backprop(const Network& net, const Eigen::VectorXd& x, Eigen::Index logit) {
  if (x.size() != net.input_width()) throw std::invalid_argument("input length differs from the network width");
  if (logit < 0 || logit >= net.output_width()) throw std::out_of_range("logit index out of range");
  const auto& layers = net.layers();
  std::vector<Eigen::VectorXd> inputs;
  inputs.reserve(layers.size());
  Eigen::VectorXd h = x;
  for (const auto& layer : layers) {
    inputs.push_back(h);
    h = apply_layer(layer, h);
  }
  std::vector<Eigen::VectorXd> grads(layers.size());
  Eigen::VectorXd g = Eigen::VectorXd::Unit(net.output_width(), logit);
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Eigen::VectorXd& in = inputs[i];
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, AffineLayer>) {
            g = l.W.transpose() * g;
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            for (Eigen::Index k = 0; k < g.size(); ++k)
              if (!(in(k) > 0.0)) g(k) = 0.0;
          } else {
            Eigen::VectorXd down = Eigen::VectorXd::Zero(l.width_in);
            for (const auto& p : l.pools) {
              Eigen::Index best = p.dims.front();
              for (Eigen::Index d : p.dims)
                if (in(d) > in(best)) best = d;
              down(best) = g(p.out_index);
            }
            g = std::move(down);
          }
        },
        layers[i]);
    grads[i] = g;
  }
  return grads;
}

}  // namespace

std::vector<Eigen::VectorXd> gradient(const Network& net, const Eigen::VectorXd& x, Eigen::Index logit_index) {
  auto grads = backprop(net, x, logit_index);
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (is_nonlinear(net.layers()[i])) out.push_back(std::move(grads[i]));
  return out;
}

Eigen::VectorXd input_gradient(const Network& net, const Eigen::VectorXd& x, Eigen::Index logit_index) {
  return backprop(net, x, logit_index).front();
}

// ---------------------------------------------------------------------------
// Input sets

void InputSpec::check(Eigen::Index input_width) const {
  if (baseline.size() != input_width) throw std::invalid_argument("baseline length differs from the input width");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be non-negative");
  std::vector<char> seen(static_cast<std::size_t>(input_width), 0);
  for (Eigen::Index c : perturbed) {
    if (c < 0 || c >= input_width) throw std::out_of_range("perturbed coordinate out of range");
    if (seen[static_cast<std::size_t>(c)]++) throw std::invalid_argument("perturbed coordinate listed twice");
  }
  if (clip && clip->first > clip->second) throw std::invalid_argument("clip range is empty");
}

Eigen::VectorXd InputSpec::lower() const {
  Eigen::VectorXd lo(static_cast<Eigen::Index>(perturbed.size()));
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    double v = baseline(perturbed[i]) - epsilon;
    if (clip) v = std::clamp(v, clip->first, clip->second);
    lo(static_cast<Eigen::Index>(i)) = v;
  }
  return lo;
}

Eigen::VectorXd InputSpec::upper() const {
  Eigen::VectorXd hi(static_cast<Eigen::Index>(perturbed.size()));
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    double v = baseline(perturbed[i]) + epsilon;
    if (clip) v = std::clamp(v, clip->first, clip->second);
    hi(static_cast<Eigen::Index>(i)) = v;
  }
  return hi;
}

LatticeSet build_embedded_box(const Eigen::VectorXd& baseline, std::span<const Eigen::Index> coords,
                              const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, int max_dim) {
  if (static_cast<Eigen::Index>(coords.size()) != lower.size())
    throw std::invalid_argument("box bounds differ from the coordinate count");
  LatticeSet box = build_box(lower, upper, max_dim);
  VertexMatrix full = baseline.transpose().replicate(box.vertex_count(), 1);
  for (std::size_t i = 0; i < coords.size(); ++i)
    full.col(coords[i]) = box.vertices().col(static_cast<Eigen::Index>(i));
  VertexMatrix region = full;
  return LatticeSet(box.lattice_ptr(), std::move(full), std::move(region), box.next_face_id());
}

LatticeSet build_input_set(const InputSpec& spec, int max_dim) {
  spec.check(spec.baseline.size());
  return build_embedded_box(spec.baseline, spec.perturbed, spec.lower(), spec.upper(), max_dim);
}

}  // namespace flreach
