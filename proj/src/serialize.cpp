#include "flreach/serialize.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace flreach {

using nlohmann::json;

json matrix_to_json(const VertexMatrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

VertexMatrix matrix_from_json(const json& j, Eigen::Index cols_if_empty) {
  if (!j.is_array()) throw std::runtime_error("matrix must be an array of rows");
  const Eigen::Index cols = j.empty() ? cols_if_empty : static_cast<Eigen::Index>(j[0].size());
  VertexMatrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw std::runtime_error("matrix rows differ in length");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), c) = j[r][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

namespace {

json faces_to_json(const FaceLattice& lat) {
  json faces = json::array();
  for (std::uint32_t f = 0; f < lat.size(); ++f) {
    const FaceRecord& rec = lat.face(f);
    json children = json::array();
    for (std::uint32_t c : lat.children(f)) children.push_back(lat.face(c).id);
    json face = {{"id", rec.id}, {"dim", rec.dim}, {"children", std::move(children)}};
    if (rec.dim == 0) face["vertex"] = rec.vertex;
    faces.push_back(std::move(face));
  }
  return faces;
}

}  // namespace

json set_to_json(const LatticeSet& s) {
  return {{"faces", faces_to_json(s.lattice())},
          {"vertices", matrix_to_json(s.vertices())},
          {"regions", matrix_to_json(s.region_vertices())}};
}

namespace {

LatticeSet assemble(const json& faces_json, VertexMatrix vertices, VertexMatrix region) {
  std::vector<FaceRecord> faces;
  std::unordered_map<FaceId, std::uint32_t> index;
  faces.reserve(faces_json.size());
  for (const auto& f : faces_json) {
    FaceRecord rec{f.at("id").get<FaceId>(), f.at("dim").get<int>(), -1};
    if (rec.dim == 0) rec.vertex = f.value("vertex", -1);
    if (!index.emplace(rec.id, static_cast<std::uint32_t>(faces.size())).second)
      throw std::invalid_argument("duplicate face id in lattice dump");
    faces.push_back(rec);
  }
  // Unnumbered 0-faces take rows in listing order.
  int next_row = 0;
  for (auto& rec : faces)
    if (rec.dim == 0 && rec.vertex < 0) rec.vertex = next_row++;
  std::vector<std::vector<std::uint32_t>> children(faces.size());
  for (std::size_t i = 0; i < faces_json.size(); ++i) {
    for (const auto& c : faces_json[i].at("children")) {
      auto it = index.find(c.get<FaceId>());
      if (it == index.end()) throw std::invalid_argument("lattice dump references an unknown face");
      children[i].push_back(it->second);
    }
  }
  FaceId next_id = 0;
  for (const auto& rec : faces) next_id = std::max(next_id, rec.id + 1);
  auto lattice = std::make_shared<const FaceLattice>(FaceLattice::from_children(faces, children));
  if (static_cast<std::size_t>(vertices.rows()) != lattice->vertex_count() ||
      static_cast<std::size_t>(region.rows()) != lattice->vertex_count())
    throw std::invalid_argument("vertex rows differ from the lattice's 0-face count");
  return LatticeSet(std::move(lattice), std::move(vertices), std::move(region), next_id);
}

}  // namespace

LatticeSet set_from_json(const json& j) {
  try {
    return assemble(j.at("faces"), matrix_from_json(j.at("vertices")), matrix_from_json(j.at("regions")));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("lattice dump format error: ") + e.what());
  }
}

json result_to_json(const ReachResult& r) {
  json sets = json::array();
  for (const auto& s : r.sets)
    sets.push_back({{"vertices", matrix_to_json(s.vertices())},
                    {"region", matrix_to_json(s.region_vertices())},
                    {"faces", faces_to_json(s.lattice())}});
  return {{"mode", r.mode == ReachMode::exact ? "exact" : "fast"},
          {"relaxation", r.relaxation},
          {"sets", std::move(sets)},
          {"set_count", r.set_count},
          {"wall_time_s", r.wall_time_s},
          {"truncated", r.truncated},
          {"partitions_done", r.partitions_done},
          {"splits", r.splits}};
}

ReachResult result_from_json(const json& j) {
  try {
    ReachResult r;
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "exact" && mode != "fast") throw std::runtime_error("unknown mode '" + mode + "'");
    r.mode = mode == "exact" ? ReachMode::exact : ReachMode::fast;
    r.relaxation = j.at("relaxation").get<double>();
    for (const auto& s : j.at("sets"))
      r.sets.push_back(
          assemble(s.at("faces"), matrix_from_json(s.at("vertices")), matrix_from_json(s.at("region"))));
    r.set_count = j.value("set_count", r.sets.size());
    r.wall_time_s = j.value("wall_time_s", 0.0);
    r.truncated = j.value("truncated", false);
    r.partitions_done = j.value("partitions_done", 0);
    r.splits = j.value("splits", std::uint64_t{0});
    return r;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("result format error: ") + e.what());
  }
}

void save_result(const ReachResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << result_to_json(r).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ReachResult load_result(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open result file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("result parse error: ") + e.what());
  }
  return result_from_json(j);
}

}  // namespace flreach
