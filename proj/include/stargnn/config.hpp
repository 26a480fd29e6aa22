#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stargnn/attnviz.hpp"
#include "stargnn/gnn.hpp"
#include "stargnn/ingest.hpp"
#include "stargnn/train.hpp"

namespace stargnn {

/// Every tunable of the pipeline. Loaded from one JSON object; unknown keys
/// are rejected.
struct PipelineConfig {
  BackboneConfig backbone;
  Preprocessing preprocessing;
  std::vector<WindowScale> scales = default_scales();
  double rate_hz = 1.0;
  int max_frames = 64;
  bool weighted = true;
  std::size_t dense_threshold = Adjacency::kDefaultDenseThreshold;

  OperatorKind operator_kind = OperatorKind::vanilla_gcn;
  int num_layers = 1;
  int sgcn_power = 1;
  Aggregator aggregator = Aggregator::mean;
  int embed_dim = 512;

  LossKind loss_kind = LossKind::triplet;
  double margin = 0.5;
  int batch_size = 128;
  double lr = 1e-4;
  std::uint64_t seed = 42;
  int max_epochs = 100;
  int patience = 5;
  double val_fraction = 0.2;
  double train_ratio = 1.0;

  std::size_t distractor_count = 0;
  RenderStyle render;

  std::string cache_dir;  // empty: $STARGNN_CACHE or ./stargnn_cache

  SamplingConfig sampling() const { return {rate_hz, max_frames}; }
  LossConfig loss() const { return {loss_kind, margin}; }
  AdamConfig adam() const { return AdamConfig{.lr = lr}; }
  std::vector<int> layer_dims(int input_dim) const;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);

  /// Apply one override, key in dotted form ("backbone.channels") and value
  /// as JSON text (bare strings accepted).
  void set(const std::string& key, const std::string& value);
};

/// Stages of the artifact chain. Each stage's hash covers only the settings
/// that influence that artifact and everything upstream of it.
enum class Stage { features, graphs, model, embeddings };

std::uint64_t config_hash(const PipelineConfig& cfg, Stage stage);

}  // namespace stargnn
