#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stargnn/graph.hpp"

namespace stargnn {

enum class OperatorKind { vanilla_gcn, cluster_gcn, sgcn };
enum class Aggregator { mean, max };

const char* to_string(OperatorKind kind);
const char* to_string(Aggregator agg);
OperatorKind parse_operator_kind(const std::string& s);
Aggregator parse_aggregator(const std::string& s);

/// Weights of one layer. `branch` is only used by cluster_gcn (the
/// graph-independent H W_b term); `weight` is W (or W_a).
struct LayerWeights {
  Matrix weight;
  Matrix branch;
};

/// Node states at some layer, N x D. Layer 0 is the region feature matrix.
struct GraphSignal {
  Matrix values;

  Eigen::Index nodes() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

struct VideoEmbedding {
  std::string video_id;
  Vector vector;
};

struct GnnModel {
  OperatorKind kind = OperatorKind::vanilla_gcn;
  Aggregator aggregator = Aggregator::mean;
  int sgcn_power = 1;
  std::vector<LayerWeights> layers;
  std::uint64_t init_seed = 0;
  std::uint64_t config_hash = 0;

  /// dims = {C_in, d_1, ..., d_S}. Uniform variance-scaling init with bound
  /// sqrt(6 / (fan_in + fan_out)), values rounded to float32.
  static GnnModel create(OperatorKind kind, const std::vector<int>& dims, Aggregator agg,
                         int sgcn_power, std::uint64_t seed);

  int num_layers() const { return static_cast<int>(layers.size()); }
  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::vector<int> dims() const;
  // Throws contract on broken dimension chains or missing branch weights.
  void validate() const;
};

GraphSignal layer_forward(const GraphSignal& signal, const Adjacency& adj, const GnnModel& model,
                          int layer);

Vector aggregate(const GraphSignal& signal, Aggregator aggregator);

/// Subtract the component mean, then L2-normalize. Throws
/// degenerate_embedding when nothing is left after centering.
VideoEmbedding postprocess(const Vector& raw, std::string video_id = {});

/// Deterministic zero-mean unit vector used when postprocess reports a
/// degenerate embedding. Requires dim >= 2.
Vector fallback_embedding(Eigen::Index dim);

/// Full S-layer pass, pre-aggregation.
GraphSignal node_outputs(const VideoGraph& g, const GnnModel& model);

VideoEmbedding embed_video(const VideoGraph& g, const GnnModel& model);

/// Mean of raw region features, postprocessed. The static-aggregation baseline.
VideoEmbedding static_embedding(const VideoGraph& g);

// ---- gradients --------------------------------------------------------------

/// Graph inputs reused across training steps: the adjacency and the layer-0
/// propagation (A_hat X, or A_hat^K X for sgcn) never change while training.
struct PreparedGraph {
  std::string video_id;
  Adjacency adjacency;
  Matrix features;
  Matrix propagated;
  int propagated_power = 0;
};

PreparedGraph prepare_graph(const VideoGraph& g, const GnnModel& model,
                            std::size_t dense_threshold = Adjacency::kDefaultDenseThreshold);

struct ForwardTrace {
  std::vector<Matrix> inputs;      // H^(l)
  std::vector<Matrix> propagated;  // A_hat H^(l) (A_hat^K H^(l) for sgcn)
  std::vector<Matrix> preacts;
  Matrix output;
  Vector raw;
  Vector centered;
  double norm = 0.0;
  Vector embedding;
  bool degenerate = false;
};

ForwardTrace forward_traced(const PreparedGraph& g, const GnnModel& model);

struct ModelGradient {
  std::vector<LayerWeights> layers;

  static ModelGradient zeros_like(const GnnModel& model);
  void add(const ModelGradient& other, double scale = 1.0);
  void scale(double factor);
};

/// Backpropagate dLoss/dEmbedding through postprocess, aggregation and all
/// layers. Accumulates into `grad`.
void backward(const ForwardTrace& trace, const PreparedGraph& g, const GnnModel& model,
              const Vector& d_embedding, ModelGradient& grad);

// ---- checkpoint (STRW) ---------------------------------------------------------

void write_model(std::ostream& out, const GnnModel& model);
GnnModel read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const GnnModel& model);
GnnModel load_model(const std::filesystem::path& path);

}  // namespace stargnn
