// Command-line front end: reach, verify, falsify, backtrack, project.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flreach/analysis.hpp"
#include "flreach/network.hpp"
#include "flreach/reach.hpp"
#include "flreach/serialize.hpp"

namespace {

using namespace flreach;
using nlohmann::json;

constexpr int kErrorExit = 4;

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad integer list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

std::string read_file(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Text files hold flat floats separated by commas or whitespace. .raw/.bin
/// files hold 8-bit pixels in HWC order and are scaled to [0, 1] and
/// reordered to CHW.
Eigen::VectorXd read_input(const std::string& path, const std::optional<ImageLayout>& shape) {
  if (ends_with(path, ".raw") || ends_with(path, ".bin")) {
    if (!shape) throw std::invalid_argument("raw images need --shape c,h,w");
    const std::string bytes = read_file(path, std::ios::binary);
    if (static_cast<Eigen::Index>(bytes.size()) != shape->size())
      throw std::invalid_argument("raw image size differs from --shape");
    Eigen::VectorXd x(shape->size());
    for (int y = 0; y < shape->height; ++y)
      for (int xx = 0; xx < shape->width; ++xx)
        for (int c = 0; c < shape->channels; ++c) {
          const auto byte = static_cast<unsigned char>(bytes[static_cast<std::size_t>(
              (static_cast<Eigen::Index>(y) * shape->width + xx) * shape->channels + c)]);
          x((static_cast<Eigen::Index>(c) * shape->height + y) * shape->width + xx) = byte / 255.0;
        }
    return x;
  }
  std::string text = read_file(path);
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  std::vector<double> values;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    values.push_back(std::stod(tok, &used));
    if (used != tok.size()) throw std::invalid_argument("bad number '" + tok + "' in " + path);
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::optional<ImageLayout> parse_shape(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto v = parse_int_list(text);
  if (v.size() != 3 || v[0] < 1 || v[1] < 1 || v[2] < 1) throw std::invalid_argument("--shape must be c,h,w");
  return ImageLayout{v[0], v[1], v[2]};
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json verdict_json(const Verdict& v, const Network& net) {
  json witnesses = json::array();
  for (const auto& w : v.witnesses)
    witnesses.push_back({{"input", vector_json(w.input)},
                         {"predicted", w.predicted},
                         {"label", net.labels()[static_cast<std::size_t>(w.predicted)]}});
  json j = {{"status", status_name(v.status)},
            {"class", v.true_class},
            {"set_count", v.set_count},
            {"wall_time_s", v.wall_time_s},
            {"min_margin", v.min_margin},
            {"witnesses", std::move(witnesses)},
            {"notes", v.notes}};
  if (!v.pixel_log.empty()) {
    json log = json::array();
    for (const auto& p : v.pixel_log)
      log.push_back({{"pixel", p.pixel}, {"wall_time_s", p.wall_time_s}, {"set_count", p.set_count},
                     {"margin", p.margin}});
    j["pixels"] = std::move(log);
  }
  return j;
}

struct ReachArgs {
  std::string model, input, pixels, shape, out;
  double epsilon = 0.0;
  bool fast = false;
  double relaxation = 1.0;
  int partitions = 1;
  double timeout = 0.0;
  int threads = 1;
  int max_box_dim = kDefaultMaxBoxDim;
  std::size_t max_sets = 5'000'000;
};

void add_reach_options(CLI::App* cmd, ReachArgs& a, bool need_out) {
  cmd->add_option("--model", a.model, "model JSON")->required();
  cmd->add_option("--input", a.input, "baseline input (CSV floats, or .raw/.bin bytes with --shape)")->required();
  cmd->add_option("--pixels", a.pixels, "comma-separated perturbed pixels (all channels) or coordinates")
      ->required();
  cmd->add_option("--epsilon", a.epsilon, "L-infinity radius")->required();
  cmd->add_option("--shape", a.shape, "image shape c,h,w; enables [0,1] clipping");
  cmd->add_flag("--fast", a.fast, "fast under-approximate mode");
  cmd->add_option("--relaxation", a.relaxation, "fraction of neurons handled exactly in fast mode")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--partitions", a.partitions, "input box partitions")->check(CLI::PositiveNumber);
  cmd->add_option("--timeout", a.timeout, "seconds (0 = none)");
  cmd->add_option("--threads", a.threads, "worker threads (0 = all cores)");
  cmd->add_option("--max-box-dim", a.max_box_dim, "largest perturbed dimension accepted");
  cmd->add_option("--max-sets", a.max_sets, "output set cap");
  auto* out = cmd->add_option("--out", a.out, "result JSON path");
  if (need_out) out->required();
}

struct Prepared {
  Network net;
  InputSpec spec;
  ReachConfig cfg;
};

Prepared prepare(const ReachArgs& a) {
  Network net = load_model(a.model);
  const auto shape = parse_shape(a.shape);
  InputSpec spec;
  spec.baseline = read_input(a.input, shape);
  spec.epsilon = a.epsilon;
  for (int p : parse_int_list(a.pixels)) {
    if (shape) {
      if (p < 0 || p >= shape->pixels()) throw std::out_of_range("pixel index out of range");
      for (int c = 0; c < shape->channels; ++c) spec.perturbed.push_back(c * shape->pixels() + p);
    } else {
      spec.perturbed.push_back(p);
    }
  }
  if (shape) {
    if (shape->size() != spec.baseline.size()) throw std::invalid_argument("--shape differs from the input length");
    spec.clip = std::pair{0.0, 1.0};
  }
  spec.check(net.input_width());
  ReachConfig cfg;
  cfg.mode = a.fast ? ReachMode::fast : ReachMode::exact;
  cfg.relaxation = a.relaxation;
  cfg.partitions = a.partitions;
  cfg.timeout_s = a.timeout;
  cfg.threads = a.threads;
  cfg.max_box_dim = a.max_box_dim;
  cfg.max_sets = a.max_sets;
  return {std::move(net), std::move(spec), cfg};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face-lattice reachability analysis for ReLU / max-pool networks"};
  app.require_subcommand(1);

  ReachArgs reach_args;
  auto* reach_cmd = app.add_subcommand("reach", "compute reachable output sets");
  add_reach_options(reach_cmd, reach_args, true);

  ReachArgs verify_args;
  auto* verify_cmd = app.add_subcommand("verify", "decide robustness on an input box");
  add_reach_options(verify_cmd, verify_args, false);

  std::string f_model, f_image, f_shape;
  FalsifyConfig f_cfg;
  auto* falsify_cmd = app.add_subcommand("falsify", "pixel-by-pixel fast-reach attack");
  falsify_cmd->add_option("--model", f_model, "model JSON")->required();
  falsify_cmd->add_option("--image", f_image, "image (CSV floats, or .raw/.bin bytes with --shape)")->required();
  falsify_cmd->add_option("--shape", f_shape, "image shape c,h,w (default 1,1,n)");
  falsify_cmd->add_option("--epsilon", f_cfg.epsilon, "per-pixel L-infinity radius");
  falsify_cmd->add_option("--relaxation", f_cfg.relaxation, "fast-mode relaxation")->check(CLI::Range(0.0, 1.0));
  falsify_cmd->add_option("--max-pixels", f_cfg.max_pixels, "pixel budget")->check(CLI::NonNegativeNumber);
  falsify_cmd->add_option("--timeout", f_cfg.timeout_s, "seconds (0 = none)");
  falsify_cmd->add_option("--threads", f_cfg.threads, "worker threads (0 = all cores)");

  std::string b_result, b_model, b_out;
  std::size_t b_set = 0;
  std::vector<std::string> b_constraints;
  auto* backtrack_cmd = app.add_subcommand("backtrack", "input region of an output set under constraints");
  backtrack_cmd->add_option("--result", b_result, "result JSON from reach")->required();
  backtrack_cmd->add_option("--set-id", b_set, "set index")->required();
  backtrack_cmd->add_option("--constraint", b_constraints, "e.g. \"1-0>=0\" (repeatable)");
  backtrack_cmd->add_option("--model", b_model, "model JSON, for logit labels");
  backtrack_cmd->add_option("--out", b_out, "write the region JSON here instead of stdout");

  std::string p_result, p_axes, p_model, p_out;
  auto* project_cmd = app.add_subcommand("project", "2-D hull CSV of every output set");
  project_cmd->add_option("--result", p_result, "result JSON from reach")->required();
  project_cmd->add_option("--axes", p_axes, "x,y axes: index, class:c or second")->required();
  project_cmd->add_option("--model", p_model, "model JSON, for logit labels");
  project_cmd->add_option("--out", p_out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kErrorExit;
  }

  try {
    if (*reach_cmd) {
      auto p = prepare(reach_args);
      const ReachResult r = reach(p.net, p.spec, p.cfg);
      save_result(r, reach_args.out);
      std::cout << json{{"set_count", r.set_count}, {"wall_time_s", r.wall_time_s}, {"truncated", r.truncated},
                        {"out", reach_args.out}}
                       .dump()
                << '\n';
      return 0;
    }
    if (*verify_cmd) {
      auto p = prepare(verify_args);
      const Eigen::Index c = argmax(forward(p.net, p.spec.baseline));
      const ReachResult r = reach(p.net, p.spec, p.cfg);
      if (!verify_args.out.empty()) save_result(r, verify_args.out);
      const Verdict v = classify_result(p.net, r, c);
      std::cout << verdict_json(v, p.net).dump() << '\n';
      return exit_code(v.status);
    }
    if (*falsify_cmd) {
      const Network net = load_model(f_model);
      auto shape = parse_shape(f_shape);
      const Eigen::VectorXd image = read_input(f_image, shape);
      const ImageLayout layout = shape.value_or(ImageLayout{1, 1, static_cast<int>(image.size())});
      const Verdict v = falsify(net, image, layout, f_cfg);
      std::cout << verdict_json(v, net).dump() << '\n';
      return exit_code(v.status);
    }
    if (*backtrack_cmd) {
      const ReachResult r = load_result(b_result);
      if (b_set >= r.sets.size()) throw std::out_of_range("set id out of range");
      const LatticeSet& s = r.sets[b_set];
      std::vector<std::string> labels;
      if (!b_model.empty()) labels = load_model(b_model).labels();
      else
        for (Eigen::Index k = 0; k < s.ambient_dim(); ++k) labels.push_back(std::to_string(k));
      std::vector<Constraint> cons;
      for (const auto& text : b_constraints) cons.push_back(parse_constraint(text, labels));
      const auto region = backtrack(s, cons);
      const json j = region ? json{{"empty", false}, {"region", set_to_json(*region)}}
                            : json{{"empty", true}, {"region", nullptr}};
      if (b_out.empty()) {
        std::cout << j.dump() << '\n';
      } else {
        std::ofstream out(b_out);
        if (!(out << j.dump() << '\n')) throw std::runtime_error("cannot write " + b_out);
      }
      return 0;
    }
    if (*project_cmd) {
      const ReachResult r = load_result(p_result);
      std::vector<std::string> labels;
      if (!p_model.empty()) labels = load_model(p_model).labels();
      const auto comma = p_axes.find(',');
      if (comma == std::string::npos) throw std::invalid_argument("--axes needs two comma-separated axes");
      const Axis x = parse_axis(std::string_view(p_axes).substr(0, comma), labels);
      const Axis y = parse_axis(std::string_view(p_axes).substr(comma + 1), labels);
      emit_projection(r, x, y, p_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kErrorExit;
  }
  return kErrorExit;
}
