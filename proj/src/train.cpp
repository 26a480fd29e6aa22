#include "stargnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

namespace {
constexpr std::uint16_t kOptimizerBlockVersion = 1;

// Fisher-Yates over the raw engine output; std::shuffle's draw pattern is
// implementation-defined.
template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}
}  // namespace

const char* to_string(LossKind kind) { return kind == LossKind::triplet ? "triplet" : "contrastive"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "triplet") return LossKind::triplet;
  if (s == "contrastive") return LossKind::contrastive;
  fail(ErrorKind::config, "unknown loss_kind '" + s + "'");
}

double squared_distance(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), ErrorKind::contract, "distance: dimension mismatch");
  return (a - b).squaredNorm();
}

double triplet_loss(const Vector& a, const Vector& p, const Vector& n, double margin) {
  return std::max(0.0, squared_distance(a, p) - squared_distance(a, n) + margin);
}

double contrastive_loss(const Vector& x, const Vector& y, bool is_positive, double margin) {
  const double d = squared_distance(x, y);
  if (is_positive) return d;
  const double gap = std::max(0.0, margin - std::sqrt(d));
  return gap * gap;
}

TripleLoss triple_loss_with_grad(const Vector& a, const Vector& p, const Vector& n,
                                 const LossConfig& cfg) {
  TripleLoss r;
  r.d_anchor = Vector::Zero(a.size());
  r.d_positive = Vector::Zero(a.size());
  r.d_negative = Vector::Zero(a.size());
  if (cfg.kind == LossKind::triplet) {
    const double v = squared_distance(a, p) - squared_distance(a, n) + cfg.margin;
    if (v > 0.0) {
      r.value = v;
      r.d_anchor = 2.0 * (n - p);
      r.d_positive = 2.0 * (p - a);
      r.d_negative = 2.0 * (a - n);
    }
    return r;
  }
  r.value = squared_distance(a, p);
  r.d_anchor = 2.0 * (a - p);
  r.d_positive = -r.d_anchor;
  const double s = std::sqrt(squared_distance(a, n));
  if (s < cfg.margin) {
    r.value += (cfg.margin - s) * (cfg.margin - s);
    if (s > 0.0) {
      const Vector ds = (a - n) / s;  // d s / d a
      r.d_anchor += -2.0 * (cfg.margin - s) * ds;
      r.d_negative += 2.0 * (cfg.margin - s) * ds;
    }
  }
  return r;
}

// ---- positive sets ------------------------------------------------------------------

std::size_t PositiveSets::intern(const std::string& id) {
  auto [it, inserted] = index_.try_emplace(id, names_.size());
  if (inserted) {
    names_.push_back(id);
    parent_.push_back(it->second);
  }
  return it->second;
}

std::size_t PositiveSets::find(std::size_t i) const {
  while (parent_[i] != i) i = parent_[i];
  return i;
}

void PositiveSets::add_group(const std::vector<std::string>& ids) {
  if (ids.empty()) return;
  const std::size_t root = find(intern(ids.front()));
  for (std::size_t i = 1; i < ids.size(); ++i) {
    const std::size_t r = find(intern(ids[i]));
    if (r != root) parent_[r] = root;
  }
  // Flatten so lookups stay short.
  for (std::size_t i = 0; i < parent_.size(); ++i) parent_[i] = find(i);
}

bool PositiveSets::are_positive(const std::string& a, const std::string& b) const {
  if (a == b) return true;
  const auto ia = index_.find(a);
  const auto ib = index_.find(b);
  if (ia == index_.end() || ib == index_.end()) return false;
  return find(ia->second) == find(ib->second);
}

std::vector<std::string> PositiveSets::group_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return {id};
  const std::size_t root = find(it->second);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (find(i) == root) out.push_back(names_[i]);
  return out;
}

std::size_t mine_hardest_negative(std::size_t anchor, std::span<const Vector> embeddings,
                                  std::span<const std::string> ids, const PositiveSets& positives) {
  require(anchor < embeddings.size() && ids.size() == embeddings.size(), ErrorKind::contract,
          "mine_hardest_negative: anchor index or id list out of range");
  std::size_t best = embeddings.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (i == anchor || positives.are_positive(ids[anchor], ids[i])) continue;
    const double d = squared_distance(embeddings[anchor], embeddings[i]);
    if (d < best_d || best == embeddings.size()) {
      best = i;
      best_d = d;
    }
  }
  if (best == embeddings.size())
    fail(ErrorKind::mining, "no valid negative in batch for anchor '" + ids[anchor] + "'");
  return best;
}

// ---- Adam -------------------------------------------------------------------------

AdamState AdamState::for_model(const GnnModel& model, const AdamConfig& cfg) {
  AdamState s;
  s.config = cfg;
  const auto zeros = ModelGradient::zeros_like(model);
  s.m = zeros.layers;
  s.v = zeros.layers;
  return s;
}

namespace {
void adam_update(Matrix& w, Matrix& m, Matrix& v, const Matrix& g, const AdamConfig& c,
                 double bias1, double bias2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  const Matrix step = (m / bias1).array() / ((v / bias2).array().sqrt() + c.epsilon);
  w -= c.lr * step;
  w = w.cast<float>().cast<double>();
}
}  // namespace

void AdamState::step(GnnModel& model, const ModelGradient& grad) {
  require(grad.layers.size() == model.layers.size() && m.size() == model.layers.size(),
          ErrorKind::contract, "optimizer state does not match model");
  ++t;
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    adam_update(model.layers[l].weight, m[l].weight, v[l].weight, grad.layers[l].weight, config,
                bias1, bias2);
    if (model.kind == OperatorKind::cluster_gcn)
      adam_update(model.layers[l].branch, m[l].branch, v[l].branch, grad.layers[l].branch, config,
                  bias1, bias2);
  }
}

// ---- training ---------------------------------------------------------------------

TrainState TrainState::create(GnnModel model, const AdamConfig& adam, std::uint64_t seed) {
  TrainState s;
  s.optimizer = AdamState::for_model(model, adam);
  s.model = std::move(model);
  s.seed = seed;
  s.rng.seed(seed);
  return s;
}

BatchResult batch_loss_and_gradient(const GnnModel& model, std::span<const PreparedGraph* const> batch,
                                    std::span<const std::pair<std::size_t, std::size_t>> anchors_positives,
                                    const PositiveSets& positives, const LossConfig& loss) {
  require(!anchors_positives.empty(), ErrorKind::contract, "empty batch");
  std::vector<ForwardTrace> traces;
  std::vector<Vector> embeddings;
  std::vector<std::string> ids;
  traces.reserve(batch.size());
  for (const auto* g : batch) {
    traces.push_back(forward_traced(*g, model));
    embeddings.push_back(traces.back().embedding);
    ids.push_back(g->video_id);
  }

  const double inv_b = 1.0 / static_cast<double>(anchors_positives.size());
  std::vector<Vector> d_emb(batch.size(), Vector::Zero(model.output_dim()));
  BatchResult result;
  for (const auto& [a, p] : anchors_positives) {
    require(a < batch.size() && p < batch.size(), ErrorKind::contract, "pair index out of batch");
    const std::size_t n = mine_hardest_negative(a, embeddings, ids, positives);
    result.negatives.push_back(n);
    const auto t = triple_loss_with_grad(embeddings[a], embeddings[p], embeddings[n], loss);
    result.loss += t.value * inv_b;
    d_emb[a] += t.d_anchor * inv_b;
    d_emb[p] += t.d_positive * inv_b;
    d_emb[n] += t.d_negative * inv_b;
  }

  result.grad = ModelGradient::zeros_like(model);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (d_emb[i].isZero(0.0)) continue;
    backward(traces[i], *batch[i], model, d_emb[i], result.grad);
  }
  return result;
}

EpochReport train_epoch(TrainState& state, const TrainingSet& data, const LossConfig& loss,
                        int batch_size, const std::function<void(const BatchRecord&)>& on_batch) {
  require(!data.pairs.empty(), ErrorKind::contract, "training set has no anchor-positive pairs");
  require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");

  std::vector<std::size_t> order(data.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_in_place(order, state.rng);

  EpochReport report;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> members;  // global graph indices
    std::unordered_map<std::size_t, std::size_t> local;
    auto slot = [&](std::size_t g) {
      auto [it, inserted] = local.try_emplace(g, members.size());
      if (inserted) members.push_back(g);
      return it->second;
    };
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = start; i < end; ++i) {
      const auto [a, p] = data.pairs[order[i]];
      pairs.emplace_back(slot(a), slot(p));
    }

    // Random fill so every anchor has at least one in-batch negative.
    for (const auto& [a, p] : pairs) {
      const auto& anchor_id = data.graphs[members[a]].video_id;
      const bool has_negative = std::any_of(members.begin(), members.end(), [&](std::size_t g) {
        return !data.positives.are_positive(anchor_id, data.graphs[g].video_id);
      });
      if (has_negative) continue;
      std::vector<std::size_t> pool;
      for (std::size_t g = 0; g < data.graphs.size(); ++g)
        if (!data.positives.are_positive(anchor_id, data.graphs[g].video_id)) pool.push_back(g);
      if (pool.empty())
        fail(ErrorKind::mining, "no negative exists in the training set for '" + anchor_id + "'");
      slot(pool[static_cast<std::size_t>(state.rng() % pool.size())]);
    }

    std::vector<const PreparedGraph*> batch;
    batch.reserve(members.size());
    for (std::size_t g : members) batch.push_back(&data.graphs[g]);

    auto result = batch_loss_and_gradient(state.model, batch, pairs, data.positives, loss);
    if (!std::isfinite(result.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << state.step << "; batch:";
      for (const auto* g : batch) msg << ' ' << g->video_id;
      msg << "; weight norms:";
      for (const auto& l : state.model.layers) msg << ' ' << l.weight.norm();
      fail(ErrorKind::numeric, msg.str());
    }
    state.optimizer.step(state.model, result.grad);
    ++state.step;
    loss_sum += result.loss;
    ++report.batches;
    if (on_batch) on_batch({state.step, result.loss, state.optimizer.config.lr});
  }
  ++state.epoch;
  report.mean_loss = loss_sum / report.batches;
  return report;
}

// ---- checkpoint ------------------------------------------------------------------

namespace {
void write_matrix_f64(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) io::write_le<double>(out, m(i, j));
}

Matrix read_matrix_f64(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = io::read_le<double>(in);
  return m;
}
}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
  io::AtomicFile file(path);
  auto& out = file.stream();
  write_model(out, state.model);
  io::write_magic(out, "STRO");
  io::write_le<std::uint16_t>(out, kOptimizerBlockVersion);
  const auto& c = state.optimizer.config;
  io::write_le<double>(out, c.lr);
  io::write_le<double>(out, c.beta1);
  io::write_le<double>(out, c.beta2);
  io::write_le<double>(out, c.epsilon);
  io::write_le<std::int64_t>(out, state.optimizer.t);
  const bool branch = state.model.kind == OperatorKind::cluster_gcn;
  for (std::size_t l = 0; l < state.model.layers.size(); ++l) {
    write_matrix_f64(out, state.optimizer.m[l].weight);
    if (branch) write_matrix_f64(out, state.optimizer.m[l].branch);
    write_matrix_f64(out, state.optimizer.v[l].weight);
    if (branch) write_matrix_f64(out, state.optimizer.v[l].branch);
  }
  io::write_le<std::int32_t>(out, state.epoch);
  io::write_le<std::int64_t>(out, state.step);
  io::write_le<std::uint64_t>(out, state.seed);
  io::write_le<double>(out, state.best_val_map);
  std::ostringstream rng_text;
  rng_text << state.rng;
  const auto rng_str = rng_text.str();
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(rng_str.size()));
  out.write(rng_str.data(), static_cast<std::streamsize>(rng_str.size()));
  file.commit();
}

TrainState load_train_state(const std::filesystem::path& path) {
  auto in = io::open_for_read(path, "training checkpoint");
  TrainState s;
  s.model = read_model(in);
  io::expect_magic(in, "STRO", path.string() + " (optimizer block)");
  const auto version = io::read_le<std::uint16_t>(in);
  require(version == kOptimizerBlockVersion, ErrorKind::format, "unsupported optimizer block version");
  auto& c = s.optimizer.config;
  c.lr = io::read_le<double>(in);
  c.beta1 = io::read_le<double>(in);
  c.beta2 = io::read_le<double>(in);
  c.epsilon = io::read_le<double>(in);
  s.optimizer.t = io::read_le<std::int64_t>(in);
  const bool branch = s.model.kind == OperatorKind::cluster_gcn;
  for (const auto& layer : s.model.layers) {
    const auto r = layer.weight.rows();
    const auto k = layer.weight.cols();
    LayerWeights m, v;
    m.weight = read_matrix_f64(in, r, k);
    if (branch) m.branch = read_matrix_f64(in, r, k);
    v.weight = read_matrix_f64(in, r, k);
    if (branch) v.branch = read_matrix_f64(in, r, k);
    s.optimizer.m.push_back(std::move(m));
    s.optimizer.v.push_back(std::move(v));
  }
  s.epoch = io::read_le<std::int32_t>(in);
  s.step = io::read_le<std::int64_t>(in);
  s.seed = io::read_le<std::uint64_t>(in);
  s.best_val_map = io::read_le<double>(in);
  const auto len = io::read_le<std::uint32_t>(in);
  std::string rng_str(len, '\0');
  in.read(rng_str.data(), len);
  if (!in) fail(ErrorKind::format, "truncated training checkpoint: " + path.string());
  std::istringstream rng_text(rng_str);
  rng_text >> s.rng;
  require(!rng_text.fail(), ErrorKind::format, "corrupt rng state in checkpoint");
  return s;
}

}  // namespace stargnn
