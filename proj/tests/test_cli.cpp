#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "flreach_cli_stdout.txt";
  const std::string cmd = std::string(FLREACH_CLI) + " " + args + " > " + log.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream buf;
  buf << in.rdbuf();
  r.out = buf.str();
  return r;
}

fs::path fixture_dir() {
  const fs::path dir = fs::temp_directory_path() / "flreach_cli";
  fs::create_directories(dir);
  // Logits (x0 + x1, 0.5) behind an identity ReLU layer.
  std::ofstream(dir / "model.json") << R"({
    "input_width": 2,
    "labels": ["high", "low"],
    "layers": [
      {"kind": "affine", "W": [[1, 0], [0, 1]], "b": [0, 0]},
      {"kind": "relu"},
      {"kind": "affine", "W": [[1, 1], [0, 0]], "b": [0, 0.5]}
    ]
  })";
  std::ofstream(dir / "input.csv") << "1.0, 1.0\n";
  std::ofstream(dir / "image.raw", std::ios::binary) << std::string("\xff\x00", 2);
  return dir;
}

}  // namespace

TEST_CASE("reach, backtrack and project round trip") {
  const fs::path d = fixture_dir();
  const std::string common = "--model " + (d / "model.json").string() + " --input " + (d / "input.csv").string();
  Run r = run("reach " + common + " --pixels 0,1 --epsilon 1.5 --out " + (d / "r.json").string());
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["set_count"].get<int>() == 4);

  std::ifstream in(d / "r.json");
  const auto result = nlohmann::json::parse(in);
  CHECK(result["mode"] == "exact");
  CHECK(result["sets"].size() == 4);
  CHECK(result["sets"][0].contains("region"));

  r = run("backtrack --result " + (d / "r.json").string() + " --set-id 0 --constraint \"1-0>=0\"");
  REQUIRE(r.code == 0);
  const auto bt = nlohmann::json::parse(r.out);
  CHECK_FALSE(bt["empty"].get<bool>());
  for (const auto& v : bt["region"]["vertices"]) CHECK(v[0].get<double>() + v[1].get<double>() <= 0.5 + 1e-9);

  r = run("backtrack --result " + (d / "r.json").string() + " --set-id 0 --model " + (d / "model.json").string() +
          " --constraint \"high>=100\"");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["empty"].get<bool>());

  r = run("project --result " + (d / "r.json").string() + " --axes class:0,second --out " + (d / "p.csv").string());
  REQUIRE(r.code == 0);
  std::ifstream csv(d / "p.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "set_id,vertex_order,x,y");
}

TEST_CASE("verify and falsify exit codes") {
  const fs::path d = fixture_dir();
  const std::string common = "--model " + (d / "model.json").string() + " --input " + (d / "input.csv").string();
  Run r = run("verify " + common + " --pixels 0,1 --epsilon 0.5");
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["status"] == "SAFE");

  r = run("verify " + common + " --pixels 0,1 --epsilon 0.9");
  CHECK(r.code == 1);
  const auto v = nlohmann::json::parse(r.out);
  CHECK(v["status"] == "UNSAFE");
  CHECK(v["witnesses"][0]["label"] == "low");

  r = run("verify " + common + " --pixels 0,1 --epsilon 0.5 --fast --relaxation 0.5");
  CHECK(r.code == 2);

  r = run("falsify --model " + (d / "model.json").string() + " --image " + (d / "image.raw").string() +
          " --shape 1,1,2 --epsilon 1 --relaxation 0.01 --max-pixels 2");
  CHECK(r.code == 1);
  const auto f = nlohmann::json::parse(r.out);
  CHECK(f["status"] == "UNSAFE");
  CHECK(f["pixels"].size() >= 1);

  r = run("falsify --model " + (d / "model.json").string() + " --image " + (d / "image.raw").string() +
          " --shape 1,1,2 --max-pixels 0");
  CHECK(r.code == 2);
}

TEST_CASE("errors exit with code 4") {
  const fs::path d = fixture_dir();
  CHECK(run("reach --model " + (d / "missing.json").string() + " --input " + (d / "input.csv").string() +
            " --pixels 0 --epsilon 1 --out " + (d / "x.json").string())
            .code == 4);
  CHECK(run("verify --model " + (d / "model.json").string() + " --input " + (d / "input.csv").string() +
            " --pixels 7 --epsilon 1")
            .code == 4);
  CHECK(run("nonsense").code == 4);
}
