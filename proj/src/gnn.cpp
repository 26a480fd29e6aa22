#include "stargnn/gnn.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

namespace {

constexpr std::uint16_t kModelFileVersion = 1;

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Matrix init_uniform(int rows, int cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m(i, j) = static_cast<float>((2.0 * unit_uniform(rng) - 1.0) * bound);
  return m;
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix propagate(const Adjacency& adj, const Matrix& h, const GnnModel& model) {
  return model.kind == OperatorKind::sgcn ? adj.apply_power(h, model.sgcn_power) : adj.apply(h);
}

void write_matrix_f32(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) io::write_le<float>(out, static_cast<float>(m(i, j)));
}

Matrix read_matrix_f32(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const float v = io::read_le<float>(in);
      require(std::isfinite(v), ErrorKind::format, "non-finite weight in checkpoint");
      m(i, j) = v;
    }
  return m;
}

}  // namespace

const char* to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::vanilla_gcn: return "vanilla_gcn";
    case OperatorKind::cluster_gcn: return "cluster_gcn";
    case OperatorKind::sgcn: return "sgcn";
  }
  return "vanilla_gcn";
}

const char* to_string(Aggregator agg) { return agg == Aggregator::mean ? "mean" : "max"; }

OperatorKind parse_operator_kind(const std::string& s) {
  if (s == "vanilla_gcn") return OperatorKind::vanilla_gcn;
  if (s == "cluster_gcn") return OperatorKind::cluster_gcn;
  if (s == "sgcn") return OperatorKind::sgcn;
  fail(ErrorKind::config, "unknown operator_kind '" + s + "'");
}

Aggregator parse_aggregator(const std::string& s) {
  if (s == "mean") return Aggregator::mean;
  if (s == "max") return Aggregator::max;
  fail(ErrorKind::config, "unknown aggregator '" + s + "'");
}

// ---- model ----------------------------------------------------------------------

GnnModel GnnModel::create(OperatorKind kind, const std::vector<int>& dims, Aggregator agg,
                          int sgcn_power, std::uint64_t seed) {
  require(dims.size() >= 2, ErrorKind::config, "model needs at least one layer");
  for (int d : dims) require(d > 0, ErrorKind::config, "layer dimensions must be positive");
  require(sgcn_power >= 1, ErrorKind::config, "sgcn_power must be >= 1");
  GnnModel m;
  m.kind = kind;
  m.aggregator = agg;
  m.sgcn_power = sgcn_power;
  m.init_seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerWeights w;
    w.weight = init_uniform(dims[l], dims[l + 1], rng);
    if (kind == OperatorKind::cluster_gcn) w.branch = init_uniform(dims[l], dims[l + 1], rng);
    m.layers.push_back(std::move(w));
  }
  return m;
}

Eigen::Index GnnModel::input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
Eigen::Index GnnModel::output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

std::vector<int> GnnModel::dims() const {
  std::vector<int> d;
  if (layers.empty()) return d;
  d.push_back(static_cast<int>(layers.front().weight.rows()));
  for (const auto& l : layers) d.push_back(static_cast<int>(l.weight.cols()));
  return d;
}

void GnnModel::validate() const {
  require(!layers.empty(), ErrorKind::contract, "model has no layers");
  require(sgcn_power >= 1, ErrorKind::contract, "sgcn_power must be >= 1");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l];
    require(w.weight.size() > 0 && w.weight.allFinite(), ErrorKind::contract,
            "layer " + std::to_string(l) + " weight empty or non-finite");
    if (kind == OperatorKind::cluster_gcn) {
      require(w.branch.rows() == w.weight.rows() && w.branch.cols() == w.weight.cols() &&
                  w.branch.allFinite(),
              ErrorKind::contract, "cluster_gcn layer " + std::to_string(l) + " branch weight shape");
    } else {
      require(w.branch.size() == 0, ErrorKind::contract, "branch weight only valid for cluster_gcn");
    }
    if (l + 1 < layers.size())
      require(w.weight.cols() == layers[l + 1].weight.rows(), ErrorKind::contract,
              "layer " + std::to_string(l) + " output does not match layer " + std::to_string(l + 1) +
                  " input");
  }
}

// ---- forward ---------------------------------------------------------------------

GraphSignal layer_forward(const GraphSignal& signal, const Adjacency& adj, const GnnModel& model,
                          int layer) {
  require(layer >= 0 && layer < model.num_layers(), ErrorKind::contract, "layer index out of range");
  const auto& w = model.layers[static_cast<std::size_t>(layer)];
  require(signal.dim() == w.weight.rows(), ErrorKind::contract,
          "layer " + std::to_string(layer) + ": signal dim " + std::to_string(signal.dim()) +
              " != weight rows " + std::to_string(w.weight.rows()));
  require(adj.size() == signal.nodes(), ErrorKind::contract, "adjacency size != node count");

  Matrix z = propagate(adj, signal.values, model) * w.weight;
  if (model.kind == OperatorKind::cluster_gcn) z += signal.values * w.branch;
  GraphSignal out{model.kind == OperatorKind::sgcn ? std::move(z) : relu(z)};
  require(out.values.allFinite(), ErrorKind::numeric,
          "non-finite output in layer " + std::to_string(layer));
  return out;
}

Vector aggregate(const GraphSignal& signal, Aggregator aggregator) {
  require(signal.nodes() > 0, ErrorKind::contract, "aggregate: empty signal");
  if (aggregator == Aggregator::mean) return signal.values.colwise().mean().transpose();
  return signal.values.colwise().maxCoeff().transpose();
}

namespace {
bool is_degenerate(const Vector& raw, double centered_norm) {
  const double scale = raw.size() ? raw.cwiseAbs().maxCoeff() : 0.0;
  return !(centered_norm > 1e-10 * scale) || centered_norm == 0.0;
}
}  // namespace

VideoEmbedding postprocess(const Vector& raw, std::string video_id) {
  require(raw.size() > 0, ErrorKind::contract, "postprocess: empty vector");
  require(raw.allFinite(), ErrorKind::numeric, "postprocess: non-finite input for '" + video_id + "'");
  const Vector centered = raw.array() - raw.mean();
  const double norm = centered.norm();
  if (is_degenerate(raw, norm))
    fail(ErrorKind::degenerate_embedding,
         "embedding for '" + video_id + "' is constant; nothing left after centering");
  return {std::move(video_id), centered / norm};
}

Vector fallback_embedding(Eigen::Index dim) {
  require(dim >= 2, ErrorKind::contract, "fallback embedding needs dim >= 2");
  // sqrt(2/D) cos(2 pi i / D): zero mean, unit norm for D >= 2.
  Vector v(dim);
  const double pi = std::acos(-1.0);
  for (Eigen::Index i = 0; i < dim; ++i)
    v[i] = std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(dim));
  v.array() -= v.mean();
  return v / v.norm();
}

GraphSignal node_outputs(const VideoGraph& g, const GnnModel& model) {
  model.validate();
  require(g.feature_dim() == model.input_dim(), ErrorKind::contract,
          "graph feature dim " + std::to_string(g.feature_dim()) + " != model input dim " +
              std::to_string(model.input_dim()));
  const auto& adj = g.adjacency();
  GraphSignal h{g.features()};
  for (int l = 0; l < model.num_layers(); ++l) h = layer_forward(h, adj, model, l);
  return h;
}

VideoEmbedding embed_video(const VideoGraph& g, const GnnModel& model) {
  return postprocess(aggregate(node_outputs(g, model), model.aggregator), g.video_id());
}

VideoEmbedding static_embedding(const VideoGraph& g) {
  return postprocess(aggregate(GraphSignal{g.features()}, Aggregator::mean), g.video_id());
}

// ---- training-side forward/backward ----------------------------------------------

PreparedGraph prepare_graph(const VideoGraph& g, const GnnModel& model, std::size_t dense_threshold) {
  require(g.feature_dim() == model.input_dim(), ErrorKind::contract,
          "graph '" + g.video_id() + "' feature dim does not match model input");
  PreparedGraph p;
  p.video_id = g.video_id();
  p.adjacency = renormalized_adjacency(g, dense_threshold);
  p.features = g.features();
  p.propagated = propagate(p.adjacency, p.features, model);
  p.propagated_power = model.kind == OperatorKind::sgcn ? model.sgcn_power : 1;
  return p;
}

ForwardTrace forward_traced(const PreparedGraph& g, const GnnModel& model) {
  const int expected_power = model.kind == OperatorKind::sgcn ? model.sgcn_power : 1;
  require(g.propagated_power == expected_power, ErrorKind::contract,
          "prepared graph built for a different propagation power");
  ForwardTrace t;
  Matrix h = g.features;
  for (int l = 0; l < model.num_layers(); ++l) {
    const auto& w = model.layers[static_cast<std::size_t>(l)];
    Matrix p = l == 0 ? g.propagated : propagate(g.adjacency, h, model);
    Matrix z = p * w.weight;
    if (model.kind == OperatorKind::cluster_gcn) z += h * w.branch;
    Matrix next = model.kind == OperatorKind::sgcn ? z : relu(z);
    require(next.allFinite(), ErrorKind::numeric, "non-finite output in layer " + std::to_string(l));
    t.inputs.push_back(std::move(h));
    t.propagated.push_back(std::move(p));
    t.preacts.push_back(std::move(z));
    h = std::move(next);
  }
  t.output = std::move(h);
  t.raw = aggregate(GraphSignal{t.output}, model.aggregator);
  t.centered = t.raw.array() - t.raw.mean();
  t.norm = t.centered.norm();
  t.degenerate = is_degenerate(t.raw, t.norm);
  t.embedding = t.degenerate ? fallback_embedding(t.raw.size()) : Vector(t.centered / t.norm);
  return t;
}

ModelGradient ModelGradient::zeros_like(const GnnModel& model) {
  ModelGradient g;
  for (const auto& l : model.layers) {
    LayerWeights z;
    z.weight = Matrix::Zero(l.weight.rows(), l.weight.cols());
    if (l.branch.size()) z.branch = Matrix::Zero(l.branch.rows(), l.branch.cols());
    g.layers.push_back(std::move(z));
  }
  return g;
}

void ModelGradient::add(const ModelGradient& other, double s) {
  require(other.layers.size() == layers.size(), ErrorKind::contract, "gradient layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += s * other.layers[l].weight;
    if (layers[l].branch.size()) layers[l].branch += s * other.layers[l].branch;
  }
}

void ModelGradient::scale(double factor) {
  for (auto& l : layers) {
    l.weight *= factor;
    if (l.branch.size()) l.branch *= factor;
  }
}

void backward(const ForwardTrace& trace, const PreparedGraph& g, const GnnModel& model,
              const Vector& d_embedding, ModelGradient& grad) {
  // The fallback vector is a constant; nothing flows back through it.
  if (trace.degenerate) return;
  const Vector& e = trace.embedding;
  // Through normalization then centering (both Jacobians symmetric).
  const Vector d_centered = (d_embedding - e * e.dot(d_embedding)) / trace.norm;
  const Vector d_raw = d_centered.array() - d_centered.mean();

  const auto n = trace.output.rows();
  Matrix d_out = Matrix::Zero(n, trace.output.cols());
  if (model.aggregator == Aggregator::mean) {
    d_out.rowwise() = d_raw.transpose() / static_cast<double>(n);
  } else {
    for (Eigen::Index j = 0; j < trace.output.cols(); ++j) {
      Eigen::Index arg = 0;
      trace.output.col(j).maxCoeff(&arg);  // first maximum
      d_out(arg, j) = d_raw[j];
    }
  }

  for (int l = model.num_layers() - 1; l >= 0; --l) {
    const auto idx = static_cast<std::size_t>(l);
    const auto& w = model.layers[idx];
    Matrix dz = d_out;
    if (model.kind != OperatorKind::sgcn) dz.array() *= (trace.preacts[idx].array() > 0.0).cast<double>();
    grad.layers[idx].weight.noalias() += trace.propagated[idx].transpose() * dz;
    if (model.kind == OperatorKind::cluster_gcn)
      grad.layers[idx].branch.noalias() += trace.inputs[idx].transpose() * dz;
    if (l > 0) {
      // A_hat is symmetric.
      Matrix dh = propagate(g.adjacency, dz * w.weight.transpose(), model);
      if (model.kind == OperatorKind::cluster_gcn) dh.noalias() += dz * w.branch.transpose();
      d_out = std::move(dh);
    }
  }
}

// ---- STRW ---------------------------------------------------------------------------

void write_model(std::ostream& out, const GnnModel& model) {
  model.validate();
  io::write_magic(out, "STRW");
  io::write_le<std::uint16_t>(out, kModelFileVersion);
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(model.kind));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(model.num_layers()));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(model.sgcn_power));
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(model.aggregator));
  for (int d : model.dims()) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (const auto& l : model.layers) {
    write_matrix_f32(out, l.weight);
    if (model.kind == OperatorKind::cluster_gcn) write_matrix_f32(out, l.branch);
  }
  io::write_le<std::uint64_t>(out, model.init_seed);
  io::write_le<std::uint64_t>(out, model.config_hash);
}

GnnModel read_model(std::istream& in) {
  io::expect_magic(in, "STRW", "checkpoint");
  const auto version = io::read_le<std::uint16_t>(in);
  require(version == kModelFileVersion, ErrorKind::format,
          "unsupported STRW version " + std::to_string(version));
  GnnModel m;
  const auto kind = io::read_le<std::uint8_t>(in);
  require(kind <= 2, ErrorKind::format, "unknown operator kind in checkpoint");
  m.kind = static_cast<OperatorKind>(kind);
  const auto layers = io::read_le<std::uint16_t>(in);
  m.sgcn_power = io::read_le<std::uint16_t>(in);
  const auto agg = io::read_le<std::uint8_t>(in);
  require(agg <= 1, ErrorKind::format, "unknown aggregator in checkpoint");
  m.aggregator = static_cast<Aggregator>(agg);
  require(layers >= 1, ErrorKind::format, "checkpoint without layers");
  std::vector<std::uint32_t> dims(layers + 1u);
  for (auto& d : dims) d = io::read_le<std::uint32_t>(in);
  for (std::size_t l = 0; l < layers; ++l) {
    LayerWeights w;
    w.weight = read_matrix_f32(in, dims[l], dims[l + 1]);
    if (m.kind == OperatorKind::cluster_gcn) w.branch = read_matrix_f32(in, dims[l], dims[l + 1]);
    m.layers.push_back(std::move(w));
  }
  m.init_seed = io::read_le<std::uint64_t>(in);
  m.config_hash = io::read_le<std::uint64_t>(in);
  m.validate();
  return m;
}

void save_model(const std::filesystem::path& path, const GnnModel& model) {
  io::AtomicFile file(path);
  write_model(file.stream(), model);
  file.commit();
}

GnnModel load_model(const std::filesystem::path& path) {
  auto in = io::open_for_read(path, "checkpoint");
  return read_model(in);
}

}  // namespace stargnn
