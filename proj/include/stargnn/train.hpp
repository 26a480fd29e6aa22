#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stargnn/gnn.hpp"

namespace stargnn {

enum class LossKind { triplet, contrastive };

const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::triplet;
  double margin = 0.5;
};

double squared_distance(const Vector& a, const Vector& b);

/// max(0, d(a,p) - d(a,n) + margin), d = squared Euclidean.
double triplet_loss(const Vector& a, const Vector& p, const Vector& n, double margin);

/// Positive pair: d(x,y). Negative pair: max(0, margin - sqrt(d(x,y)))^2.
double contrastive_loss(const Vector& x, const Vector& y, bool is_positive, double margin);

/// Loss of one (anchor, positive, negative) triple under the configured kind.
/// Contrastive applies the pair loss to (a,p) as positive and (a,n) as negative.
struct TripleLoss {
  double value = 0.0;
  Vector d_anchor;
  Vector d_positive;
  Vector d_negative;
};
TripleLoss triple_loss_with_grad(const Vector& a, const Vector& p, const Vector& n,
                                 const LossConfig& cfg);

/// Positive-set lookup: each id maps to a group; ids in the same group are
/// mutual positives. Ids absent from the map are positive only to themselves.
class PositiveSets {
 public:
  PositiveSets() = default;
  /// Merges with any group already containing one of the ids.
  void add_group(const std::vector<std::string>& ids);
  bool are_positive(const std::string& a, const std::string& b) const;
  std::vector<std::string> group_of(const std::string& id) const;

 private:
  std::size_t find(std::size_t i) const;
  std::size_t intern(const std::string& id);

  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
  std::vector<std::size_t> parent_;
};

/// Index of the in-batch embedding closest to the anchor among those that
/// are neither the anchor itself nor in its positive set. Lowest index wins
/// ties. Throws ErrorKind::mining when no candidate qualifies.
std::size_t mine_hardest_negative(std::size_t anchor, std::span<const Vector> embeddings,
                                  std::span<const std::string> ids,
                                  const PositiveSets& positives);

// ---- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::vector<LayerWeights> m;
  std::vector<LayerWeights> v;

  static AdamState for_model(const GnnModel& model, const AdamConfig& cfg);
  /// One update. Weights are rounded back to float32 so checkpoints are exact.
  void step(GnnModel& model, const ModelGradient& grad);
};

// ---- training loop ---------------------------------------------------------------

struct TrainingSet {
  std::vector<PreparedGraph> graphs;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (anchor, positive) graph indices
  PositiveSets positives;
};

struct TrainState {
  GnnModel model;
  AdamState optimizer;
  int epoch = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::mt19937_64 rng;
  double best_val_map = -1.0;

  static TrainState create(GnnModel model, const AdamConfig& adam, std::uint64_t seed);
};

struct BatchRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct EpochReport {
  double mean_loss = 0.0;
  int batches = 0;
};

/// Mean batch loss (1/B sum over triples) and its gradient, hardest negatives
/// mined among `batch` graphs. `anchors_positives` are indices into `batch`.
struct BatchResult {
  double loss = 0.0;
  ModelGradient grad;
  std::vector<std::size_t> negatives;
};
BatchResult batch_loss_and_gradient(const GnnModel& model, std::span<const PreparedGraph* const> batch,
                                    std::span<const std::pair<std::size_t, std::size_t>> anchors_positives,
                                    const PositiveSets& positives, const LossConfig& loss);

/// One pass over shuffled (anchor, positive) pairs in mini-batches of
/// batch_size, one optimizer step per batch.
EpochReport train_epoch(TrainState& state, const TrainingSet& data, const LossConfig& loss,
                        int batch_size,
                        const std::function<void(const BatchRecord&)>& on_batch = {});

// Training checkpoint: STRW model block followed by optimizer state.
void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

}  // namespace stargnn
