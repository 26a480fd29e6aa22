#pragma once

// File-level pipeline stages behind the CLI and the C API.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stargnn/config.hpp"
#include "stargnn/retrieval.hpp"

namespace stargnn::pipeline {

/// Cache root: config value, else $STARGNN_CACHE, else ./stargnn_cache.
std::filesystem::path cache_root(const PipelineConfig& cfg);

/// Exclusive advisory lock on <dir>/.lock for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

FeatureCache feature_cache(const PipelineConfig& cfg);

struct ExtractStats {
  std::size_t computed = 0;
  std::size_t cached = 0;
  std::size_t failed = 0;
};

/// Feature maps for every manifest entry. Per-video failures are appended to
/// <cache>/extract_errors.jsonl; throws only when every video fails.
ExtractStats extract(const PipelineConfig& cfg, const std::filesystem::path& manifest);

/// Region graph for one video from its cached features.
VideoGraph graph_from_cache(const PipelineConfig& cfg, const std::string& video_id);

std::filesystem::path graph_path(const PipelineConfig& cfg, const std::string& video_id);

struct GraphStats {
  std::size_t built = 0;
  std::size_t cached = 0;
};

/// Builds and stores STRG files. Missing features raise pipeline_order.
GraphStats build_graphs(const PipelineConfig& cfg, const std::filesystem::path& manifest);

/// Loads the cached graph, building it from features when absent.
VideoGraph load_graph(const PipelineConfig& cfg, const std::string& video_id);

struct TrainOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path log;  // JSON-lines batch log; empty to skip
  std::optional<double> train_ratio;
};

struct TrainSummary {
  int epochs = 0;
  double final_loss = 0.0;
  double best_val_map = -1.0;
  std::size_t train_queries = 0;
  std::size_t val_queries = 0;
};

/// Trains on relevance records whose query is in the train split, keeps the
/// checkpoint with the best validation mAP, stops after `patience` epochs
/// without improvement.
TrainSummary train(const PipelineConfig& cfg, const std::filesystem::path& manifest,
                   const std::filesystem::path& relevance, const TrainOptions& opts);

/// Queries whose ids are sampled into the training subset for a ratio < 1.
std::vector<QueryRelevance> subsample_queries(std::vector<QueryRelevance> queries, double ratio,
                                              std::uint64_t seed);

struct EmbedOptions {
  std::optional<std::filesystem::path> checkpoint;  // none: static aggregation
  std::optional<Split> split;                       // none: every entry
};

/// Embeds manifest videos into an index. Degenerate embeddings are replaced
/// with the fallback vector and reported on stderr.
EmbeddingIndex embed(const PipelineConfig& cfg, const std::filesystem::path& manifest,
                     const EmbedOptions& opts);

/// Merges stores; all must share dimension and config hash.
EmbeddingIndex merge_indexes(const std::vector<EmbeddingIndex>& parts);

struct EvalOptions {
  std::size_t distractor_count = 0;
  std::uint64_t seed = 0;
};

/// Distractor pool = manifest entries with split "distractor".
EvaluationReport evaluate(const EmbeddingIndex& index, const std::filesystem::path& relevance,
                          const std::filesystem::path& manifest, const EvalOptions& opts);

std::vector<std::filesystem::path> render_attention(const PipelineConfig& cfg,
                                                    const std::filesystem::path& manifest,
                                                    const std::optional<std::filesystem::path>& checkpoint,
                                                    const std::string& video_id, AttentionMode mode,
                                                    const std::filesystem::path& out_dir);

}  // namespace stargnn::pipeline
