// Exercises the shared library through its C header only.
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "stargnn/stargnn.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  Scratch() {
    path = fs::temp_directory_path() / ("stargnn_capi_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Config {
  stargnn_config* cfg = nullptr;
  Config() { REQUIRE(stargnn_config_load(nullptr, &cfg) == STARGNN_OK); }
  ~Config() { stargnn_config_free(cfg); }
};

std::string kind() { return stargnn_last_error_kind(); }

}  // namespace

TEST_CASE("status values") {
  CHECK(STARGNN_OK == 0);
  CHECK(STARGNN_ERR_USAGE == 1);
  CHECK(STARGNN_ERR_DATA == 2);
  CHECK(STARGNN_ERR_NUMERIC == 3);
  CHECK(std::strlen(stargnn_version()) > 0);
}

TEST_CASE("null arguments are usage errors") {
  CHECK(stargnn_config_load(nullptr, nullptr) == STARGNN_ERR_USAGE);
  CHECK(kind() == "usage");
  CHECK(std::strlen(stargnn_last_error()) > 0);
  Config c;
  CHECK(stargnn_config_set(c.cfg, nullptr, "1") == STARGNN_ERR_USAGE);
  CHECK(stargnn_config_hash(c.cfg, "model", nullptr) == STARGNN_ERR_USAGE);
  CHECK(stargnn_extract(nullptr, "m.jsonl", nullptr) == STARGNN_ERR_USAGE);
  CHECK(stargnn_index_load(nullptr, nullptr) == STARGNN_ERR_USAGE);
  // freeing NULL is harmless
  stargnn_config_free(nullptr);
  stargnn_index_free(nullptr);
  stargnn_string_free(nullptr);
}

TEST_CASE("config through the C API") {
  Config c;
  uint64_t before = 0, after = 0, graphs = 0;
  REQUIRE(stargnn_config_hash(c.cfg, "model", &before) == STARGNN_OK);
  CHECK(std::string(stargnn_last_error()).empty());
  REQUIRE(stargnn_config_set(c.cfg, "embed_dim", "64") == STARGNN_OK);
  REQUIRE(stargnn_config_hash(c.cfg, "model", &after) == STARGNN_OK);
  CHECK(before != after);
  REQUIRE(stargnn_config_hash(c.cfg, "graphs", &graphs) == STARGNN_OK);
  CHECK(graphs != after);

  CHECK(stargnn_config_set(c.cfg, "no.such.key", "1") == STARGNN_ERR_USAGE);
  CHECK(kind() == "config");
  CHECK(stargnn_config_hash(c.cfg, "weights", &after) == STARGNN_ERR_USAGE);

  char* json = nullptr;
  REQUIRE(stargnn_config_to_json(c.cfg, &json) == STARGNN_OK);
  CHECK(std::string(json).find("\"embed_dim\": 64") != std::string::npos);
  stargnn_string_free(json);

  Scratch dir;
  { std::ofstream(dir / "bad.json") << R"({"margin": 1, "extra": true})"; }
  stargnn_config* loaded = nullptr;
  CHECK(stargnn_config_load((dir / "bad.json").c_str(), &loaded) == STARGNN_ERR_USAGE);
  CHECK(kind() == "config");
  CHECK(loaded == nullptr);
}

TEST_CASE("data errors map to status 2") {
  Scratch dir;
  Config c;
  REQUIRE(stargnn_config_set(c.cfg, "cache_dir", (dir / "cache").c_str()) == STARGNN_OK);
  stargnn_extract_stats stats{};
  CHECK(stargnn_extract(c.cfg, (dir / "missing.jsonl").c_str(), &stats) == STARGNN_ERR_DATA);
  CHECK(kind() == "input");
  stargnn_index* index = nullptr;
  CHECK(stargnn_index_load((dir / "missing.stre").c_str(), &index) == STARGNN_ERR_DATA);
  CHECK(index == nullptr);
}

TEST_CASE("end to end through the C API") {
  Scratch dir;
  REQUIRE(stargnn_synth((dir / "data").c_str(), 3, 2, 2, 5) == STARGNN_OK);
  const auto manifest = dir / "data/manifest.jsonl";
  const auto rel_train = dir / "data/relevance_train.jsonl";
  const auto rel_test = dir / "data/relevance_test.jsonl";

  Config c;
  REQUIRE(stargnn_config_set(c.cfg, "cache_dir", (dir / "cache").c_str()) == STARGNN_OK);
  REQUIRE(stargnn_config_set(c.cfg, "backbone.channels", "16") == STARGNN_OK);
  REQUIRE(stargnn_config_set(c.cfg, "embed_dim", "8") == STARGNN_OK);
  REQUIRE(stargnn_config_set(c.cfg, "max_epochs", "2") == STARGNN_OK);
  REQUIRE(stargnn_config_set(c.cfg, "batch_size", "4") == STARGNN_OK);

  size_t built = 0, cached = 0;
  CHECK(stargnn_build_graphs(c.cfg, manifest.c_str(), &built, &cached) == STARGNN_ERR_DATA);
  CHECK(kind() == "pipeline_order");

  stargnn_extract_stats stats{};
  REQUIRE(stargnn_extract(c.cfg, manifest.c_str(), &stats) == STARGNN_OK);
  CHECK(stats.computed == 3 * 3 + 2);
  CHECK(stats.failed == 0);
  REQUIRE(stargnn_build_graphs(c.cfg, manifest.c_str(), &built, &cached) == STARGNN_OK);
  CHECK(built == stats.computed);

  stargnn_train_summary summary{};
  REQUIRE(stargnn_train(c.cfg, manifest.c_str(), rel_train.c_str(), (dir / "model.ckpt").c_str(), nullptr, 0.0,
                        &summary) == STARGNN_OK);
  CHECK(summary.epochs >= 1);
  CHECK(std::isfinite(summary.final_loss));

  size_t count = 0;
  REQUIRE(stargnn_embed(c.cfg, manifest.c_str(), (dir / "model.ckpt").c_str(), "test",
                        (dir / "test.stre").c_str(), &count) == STARGNN_OK);
  CHECK(count > 0);
  size_t dcount = 0;
  REQUIRE(stargnn_embed(c.cfg, manifest.c_str(), (dir / "model.ckpt").c_str(), "distractor",
                        (dir / "dis.stre").c_str(), &dcount) == STARGNN_OK);
  CHECK(dcount == 2);
  CHECK(stargnn_embed(c.cfg, manifest.c_str(), nullptr, "holdout", (dir / "x.stre").c_str(), &count) ==
        STARGNN_ERR_USAGE);

  const std::string parts[] = {dir / "test.stre", dir / "dis.stre"};
  const char* paths[] = {parts[0].c_str(), parts[1].c_str()};
  size_t merged = 0;
  REQUIRE(stargnn_index_merge(paths, 2, (dir / "all.stre").c_str(), &merged) == STARGNN_OK);

  stargnn_index* index = nullptr;
  REQUIRE(stargnn_index_load((dir / "all.stre").c_str(), &index) == STARGNN_OK);
  CHECK(stargnn_index_size(index) == merged);
  REQUIRE(stargnn_index_dim(index) == 8);

  float v[8];
  CHECK(stargnn_index_get(index, "nobody", v, 8) == STARGNN_ERR_DATA);
  CHECK(kind() == "lookup");
  CHECK(stargnn_index_get(index, "nobody", v, 3) != STARGNN_OK);

  char* hits = nullptr;
  std::ifstream rel(rel_test);
  std::string line;
  REQUIRE(std::getline(rel, line));
  const auto q0 = line.find("\"query\":\"") + 9;
  const std::string query = line.substr(q0, line.find('"', q0) - q0);
  REQUIRE(stargnn_index_get(index, query.c_str(), v, 8) == STARGNN_OK);
  double norm = 0.0;
  for (float x : v) norm += double(x) * x;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-5));
  REQUIRE(stargnn_index_search(index, query.c_str(), 2, &hits) == STARGNN_OK);
  CHECK(std::string(hits).front() == '[');
  CHECK(std::string(hits).find(query) == std::string::npos);
  stargnn_string_free(hits);

  double map0 = 0.0, map2 = 0.0;
  REQUIRE(stargnn_evaluate(index, rel_test.c_str(), manifest.c_str(), 0, 1, nullptr, &map0) == STARGNN_OK);
  REQUIRE(stargnn_evaluate(index, rel_test.c_str(), manifest.c_str(), 2, 1, (dir / "report.json").c_str(),
                           &map2) == STARGNN_OK);
  CHECK(map0 >= 0.0);
  CHECK(map0 <= 1.0);
  CHECK(map2 <= map0);
  CHECK(fs::exists(dir / "report.json"));
  stargnn_index_free(index);

  size_t files = 0;
  CHECK(stargnn_render_attention(c.cfg, manifest.c_str(), nullptr, query.c_str(), "star_gnn",
                                 (dir / "attn").c_str(), &files) == STARGNN_ERR_USAGE);
  REQUIRE(stargnn_render_attention(c.cfg, manifest.c_str(), (dir / "model.ckpt").c_str(), query.c_str(),
                                   "star_gnn", (dir / "attn").c_str(), &files) == STARGNN_OK);
  CHECK(files >= 2);
}
