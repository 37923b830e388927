#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "flreach/lattice.hpp"
#include "flreach/reach.hpp"

namespace flreach {

/// {"faces":[{"id","dim","vertex"?,"children":[ids]}], "vertices":[[...]],
///  "regions":[[...]]}. 0-faces carry the row of their vertex.
nlohmann::json set_to_json(const LatticeSet& s);
LatticeSet set_from_json(const nlohmann::json& j);

/// {"mode","relaxation","sets":[{"vertices","region","faces"}],"set_count",
///  "wall_time_s","truncated","partitions_done","splits"}.
nlohmann::json result_to_json(const ReachResult& r);
ReachResult result_from_json(const nlohmann::json& j);

void save_result(const ReachResult& r, const std::filesystem::path& path);
ReachResult load_result(const std::filesystem::path& path);

nlohmann::json matrix_to_json(const VertexMatrix& m);
VertexMatrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty = 0);

}  // namespace flreach
