#include "stargnn/stargnn.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include <json.hpp>

#include "stargnn/error.hpp"
#include "stargnn/pipeline.hpp"
#include "stargnn/synth.hpp"

struct stargnn_config {
  stargnn::PipelineConfig value;
};

struct stargnn_index {
  stargnn::EmbeddingIndex value;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_last_kind;

stargnn_status record(stargnn_status status, std::string kind, std::string message) {
  g_last_kind = std::move(kind);
  g_last_error = std::move(message);
  return status;
}

template <typename F>
stargnn_status guarded(F&& body) {
  g_last_error.clear();
  g_last_kind.clear();
  try {
    body();
    return STARGNN_OK;
  } catch (const stargnn::Error& e) {
    return record(static_cast<stargnn_status>(stargnn::exit_code(e.kind())), stargnn::to_string(e.kind()),
                  e.what());
  } catch (const std::bad_alloc&) {
    return record(STARGNN_ERR_DATA, "out_of_memory", "out of memory");
  } catch (const std::exception& e) {
    return record(STARGNN_ERR_DATA, "internal", e.what());
  }
}

void need(const void* p, const char* name) {
  if (!p) stargnn::fail(stargnn::ErrorKind::usage, std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

stargnn::Stage parse_stage(const std::string& s) {
  if (s == "features") return stargnn::Stage::features;
  if (s == "graphs") return stargnn::Stage::graphs;
  if (s == "model") return stargnn::Stage::model;
  if (s == "embeddings") return stargnn::Stage::embeddings;
  stargnn::fail(stargnn::ErrorKind::usage, "unknown stage '" + s + "'");
}

stargnn::Split parse_split(const std::string& s) {
  if (s == "train") return stargnn::Split::train;
  if (s == "test") return stargnn::Split::test;
  if (s == "distractor") return stargnn::Split::distractor;
  stargnn::fail(stargnn::ErrorKind::usage, "unknown split '" + s + "'");
}

}  // namespace

extern "C" {

const char* stargnn_version(void) { return "1.0.0"; }

const char* stargnn_last_error(void) { return g_last_error.c_str(); }

const char* stargnn_last_error_kind(void) { return g_last_kind.c_str(); }

void stargnn_string_free(char* s) { std::free(s); }

stargnn_status stargnn_config_load(const char* path, stargnn_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<stargnn_config>();
    if (path) cfg->value = stargnn::PipelineConfig::load(path);
    *out = cfg.release();
  });
}

void stargnn_config_free(stargnn_config* cfg) { delete cfg; }

stargnn_status stargnn_config_set(stargnn_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    cfg->value.set(key, value);
  });
}

stargnn_status stargnn_config_hash(const stargnn_config* cfg, const char* stage, uint64_t* out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(stage, "stage");
    need(out, "out");
    *out = stargnn::config_hash(cfg->value, parse_stage(stage));
  });
}

stargnn_status stargnn_config_to_json(const stargnn_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_json, "out_json");
    *out_json = dup_string(cfg->value.to_json().dump(2));
  });
}

stargnn_status stargnn_synth(const char* out_dir, int base_clips, int transforms, int distractors,
                             uint64_t seed) {
  return guarded([&] {
    need(out_dir, "out_dir");
    stargnn::synth::FixtureConfig fc;
    fc.base_clips = base_clips;
    fc.transforms_per_clip = transforms;
    fc.distractors = distractors;
    fc.seed = seed;
    stargnn::require(distractors >= 0, stargnn::ErrorKind::usage, "distractors must be >= 0");
    stargnn::synth::write_fixture(fc, out_dir);
  });
}

stargnn_status stargnn_extract(const stargnn_config* cfg, const char* manifest,
                               stargnn_extract_stats* stats) {
  return guarded([&] {
    need(cfg, "cfg");
    need(manifest, "manifest");
    const auto s = stargnn::pipeline::extract(cfg->value, manifest);
    if (stats) *stats = {s.computed, s.cached, s.failed};
  });
}

stargnn_status stargnn_build_graphs(const stargnn_config* cfg, const char* manifest, size_t* built,
                                    size_t* cached) {
  return guarded([&] {
    need(cfg, "cfg");
    need(manifest, "manifest");
    const auto s = stargnn::pipeline::build_graphs(cfg->value, manifest);
    if (built) *built = s.built;
    if (cached) *cached = s.cached;
  });
}

stargnn_status stargnn_train(const stargnn_config* cfg, const char* manifest, const char* relevance,
                             const char* checkpoint_out, const char* log_path, double train_ratio,
                             stargnn_train_summary* summary) {
  return guarded([&] {
    need(cfg, "cfg");
    need(manifest, "manifest");
    need(relevance, "relevance");
    need(checkpoint_out, "checkpoint_out");
    stargnn::pipeline::TrainOptions opts;
    opts.checkpoint = checkpoint_out;
    if (log_path) opts.log = log_path;
    if (train_ratio > 0) opts.train_ratio = train_ratio;
    const auto s = stargnn::pipeline::train(cfg->value, manifest, relevance, opts);
    if (summary) *summary = {s.epochs, s.final_loss, s.best_val_map, s.train_queries, s.val_queries};
  });
}

stargnn_status stargnn_embed(const stargnn_config* cfg, const char* manifest, const char* checkpoint,
                             const char* split, const char* store_out, size_t* count) {
  return guarded([&] {
    need(cfg, "cfg");
    need(manifest, "manifest");
    need(store_out, "store_out");
    stargnn::pipeline::EmbedOptions opts;
    if (checkpoint) opts.checkpoint = checkpoint;
    if (split) opts.split = parse_split(split);
    const auto index = stargnn::pipeline::embed(cfg->value, manifest, opts);
    stargnn::save_index(store_out, index);
    if (count) *count = index.size();
  });
}

stargnn_status stargnn_index_load(const char* path, stargnn_index** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto index = std::make_unique<stargnn_index>();
    index->value = stargnn::load_index(path);
    *out = index.release();
  });
}

void stargnn_index_free(stargnn_index* index) { delete index; }

size_t stargnn_index_size(const stargnn_index* index) { return index ? index->value.size() : 0; }

size_t stargnn_index_dim(const stargnn_index* index) {
  return index ? static_cast<size_t>(index->value.dim()) : 0;
}

stargnn_status stargnn_index_get(const stargnn_index* index, const char* id, float* out, size_t dim) {
  return guarded([&] {
    need(index, "index");
    need(id, "id");
    need(out, "out");
    const auto& v = index->value.get(id).vector;
    stargnn::require(dim == static_cast<size_t>(v.size()), stargnn::ErrorKind::usage,
                     "buffer holds " + std::to_string(dim) + " floats, embedding has " +
                         std::to_string(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  });
}

stargnn_status stargnn_index_merge(const char* const* paths, size_t n, const char* out_path,
                                   size_t* count) {
  return guarded([&] {
    need(paths, "paths");
    need(out_path, "out_path");
    std::vector<stargnn::EmbeddingIndex> parts;
    for (size_t i = 0; i < n; ++i) {
      need(paths[i], "paths[i]");
      parts.push_back(stargnn::load_index(paths[i]));
    }
    const auto merged = stargnn::pipeline::merge_indexes(parts);
    stargnn::save_index(out_path, merged);
    if (count) *count = merged.size();
  });
}

stargnn_status stargnn_index_search(const stargnn_index* index, const char* query_id, size_t top_k,
                                    char** out_json) {
  return guarded([&] {
    need(index, "index");
    need(query_id, "query_id");
    need(out_json, "out_json");
    const auto& q = index->value.get(query_id);
    std::set<std::string> candidates;
    for (const auto& [id, _] : index->value.entries())
      if (id != q.video_id) candidates.insert(id);
    const auto ranked = stargnn::rank(q.vector, index->value, candidates);
    nlohmann::json j = nlohmann::json::array();
    for (size_t i = 0; i < ranked.size() && (top_k == 0 || i < top_k); ++i)
      j.push_back({{"id", ranked[i].id}, {"score", ranked[i].score}});
    *out_json = dup_string(j.dump());
  });
}

stargnn_status stargnn_evaluate(const stargnn_index* index, const char* relevance, const char* manifest,
                                size_t distractors, uint64_t seed, const char* report_out,
                                double* map_out) {
  return guarded([&] {
    need(index, "index");
    need(relevance, "relevance");
    stargnn::require(manifest != nullptr || distractors == 0, stargnn::ErrorKind::usage,
                     "distractors need a manifest");
    const auto report = stargnn::pipeline::evaluate(index->value, relevance, manifest ? manifest : "",
                                                    {distractors, seed});
    if (report_out) stargnn::write_report(report_out, report);
    if (map_out) *map_out = report.map;
  });
}

stargnn_status stargnn_render_attention(const stargnn_config* cfg, const char* manifest,
                                        const char* checkpoint, const char* video_id, const char* mode,
                                        const char* out_dir, size_t* files_written) {
  return guarded([&] {
    need(cfg, "cfg");
    need(manifest, "manifest");
    need(video_id, "video_id");
    need(mode, "mode");
    need(out_dir, "out_dir");
    std::optional<std::filesystem::path> ckpt;
    if (checkpoint) ckpt = checkpoint;
    const auto files = stargnn::pipeline::render_attention(cfg->value, manifest, ckpt, video_id,
                                                           stargnn::parse_attention_mode(mode), out_dir);
    if (files_written) *files_written = files.size();
  });
}

}  // extern "C"
