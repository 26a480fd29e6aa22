#include "stargnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

namespace {
constexpr std::uint16_t kGraphFileVersion = 1;
}

double cosine_weight(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), ErrorKind::contract,
          "cosine_weight: dimension mismatch " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), 0.0, 1.0);
}

// ---- Adjacency ----------------------------------------------------------------

Adjacency Adjacency::dense(Matrix m) {
  Adjacency a;
  a.sparse_ = false;
  a.dense_ = std::move(m);
  return a;
}

Adjacency Adjacency::sparse(Eigen::SparseMatrix<double> m) {
  Adjacency a;
  a.sparse_ = true;
  a.sparse_m_ = std::move(m);
  return a;
}

Eigen::Index Adjacency::size() const { return sparse_ ? sparse_m_.rows() : dense_.rows(); }

Matrix Adjacency::apply(const Matrix& m) const {
  require(m.rows() == size(), ErrorKind::contract, "adjacency/signal row mismatch");
  if (sparse_) return sparse_m_ * m;
  return dense_ * m;
}

Matrix Adjacency::apply_power(const Matrix& m, int power) const {
  Matrix out = m;
  for (int i = 0; i < power; ++i) out = apply(out);
  return out;
}

Matrix Adjacency::to_dense() const { return sparse_ ? Matrix(sparse_m_) : dense_; }

Adjacency renormalized_adjacency(std::size_t node_count, std::span<const Edge> edges,
                                 std::size_t dense_threshold) {
  const auto n = static_cast<Eigen::Index>(node_count);
  Vector degree = Vector::Ones(n);  // self-loop
  for (const auto& e : edges) {
    require(e.u < node_count && e.v < node_count && e.u != e.v, ErrorKind::contract,
            "edge endpoint out of range or self-edge");
    degree[e.u] += e.weight;
    degree[e.v] += e.weight;
  }
  const Vector inv_sqrt = degree.cwiseSqrt().cwiseInverse();

  if (node_count <= dense_threshold) {
    Matrix a = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) a(i, i) = inv_sqrt[i] * inv_sqrt[i];
    for (const auto& e : edges) {
      const double w = e.weight * inv_sqrt[e.u] * inv_sqrt[e.v];
      a(e.u, e.v) += w;
      a(e.v, e.u) += w;
    }
    return Adjacency::dense(std::move(a));
  }

  std::vector<Eigen::Triplet<double>> coo;
  coo.reserve(static_cast<std::size_t>(n) + 2 * edges.size());
  for (Eigen::Index i = 0; i < n; ++i) coo.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
  for (const auto& e : edges) {
    const double w = e.weight * inv_sqrt[e.u] * inv_sqrt[e.v];
    coo.emplace_back(e.u, e.v, w);
    coo.emplace_back(e.v, e.u, w);
  }
  Eigen::SparseMatrix<double> s(n, n);
  s.setFromTriplets(coo.begin(), coo.end());
  return Adjacency::sparse(std::move(s));
}

Adjacency renormalized_adjacency(const VideoGraph& g, std::size_t dense_threshold) {
  return renormalized_adjacency(g.node_count(), g.edges(), dense_threshold);
}

// ---- VideoGraph -----------------------------------------------------------------

VideoGraph::VideoGraph(std::string video_id, int frame_count, int scale_count, bool weighted,
                       std::vector<RegionNode> nodes, std::vector<Edge> edges)
    : video_id_(std::move(video_id)),
      frame_count_(frame_count),
      scale_count_(scale_count),
      weighted_(weighted),
      nodes_(std::move(nodes)),
      edges_(std::move(edges)) {
  require(!nodes_.empty(), ErrorKind::contract, "graph needs at least one node");
  const auto dim = nodes_.front().feature.size();
  features_.resize(static_cast<Eigen::Index>(nodes_.size()), dim);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    require(nodes_[i].feature.size() == dim, ErrorKind::contract, "region feature dims differ");
    features_.row(static_cast<Eigen::Index>(i)) = nodes_[i].feature.transpose();
  }
}

const Adjacency& VideoGraph::adjacency(std::size_t dense_threshold) const {
  std::call_once(cache_->once,
                 [&] { cache_->value = renormalized_adjacency(*this, dense_threshold); });
  return cache_->value;
}

VideoGraph build_graph(std::string video_id, std::vector<RegionNode> regions, bool weighted) {
  require(!regions.empty(), ErrorKind::contract, "build_graph: no regions");
  std::sort(regions.begin(), regions.end(), [](const RegionNode& a, const RegionNode& b) {
    return std::tie(a.frame, a.scale, a.position) < std::tie(b.frame, b.scale, b.position);
  });
  for (std::size_t i = 1; i < regions.size(); ++i) {
    const auto& a = regions[i - 1];
    const auto& b = regions[i];
    require(!(a.frame == b.frame && a.scale == b.scale && a.position == b.position),
            ErrorKind::contract,
            "duplicate region (frame " + std::to_string(b.frame) + ", scale " +
                std::to_string(b.scale) + ", position " + std::to_string(b.position) + ")");
  }

  std::map<int, std::vector<std::uint32_t>> by_frame;
  std::map<std::pair<int, int>, std::vector<std::uint32_t>> by_location;
  std::set<int> scales;
  for (std::uint32_t i = 0; i < regions.size(); ++i) {
    by_frame[regions[i].frame].push_back(i);
    by_location[{regions[i].scale, regions[i].position}].push_back(i);
    scales.insert(regions[i].scale);
  }

  auto weight = [&](std::uint32_t u, std::uint32_t v) {
    if (!weighted) return 1.0;
    // Stored as float32 on disk; keep the in-memory value identical.
    return static_cast<double>(static_cast<float>(cosine_weight(regions[u].feature, regions[v].feature)));
  };

  std::vector<Edge> edges;
  auto connect_all = [&](const std::vector<std::uint32_t>& members) {
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        edges.push_back({members[a], members[b], weight(members[a], members[b])});
  };
  for (const auto& [frame, members] : by_frame) connect_all(members);
  for (const auto& [loc, members] : by_location) connect_all(members);
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });

  return VideoGraph(std::move(video_id), static_cast<int>(by_frame.size()),
                    static_cast<int>(scales.size()), weighted, std::move(regions), std::move(edges));
}

// ---- STRG ---------------------------------------------------------------------

void write_graph_file(const std::filesystem::path& path, const VideoGraph& g,
                      std::uint64_t config_hash) {
  io::AtomicFile file(path);
  auto& out = file.stream();
  const auto n = static_cast<std::uint32_t>(g.node_count());
  const auto c = static_cast<std::uint32_t>(g.feature_dim());
  io::write_magic(out, "STRG");
  io::write_le<std::uint16_t>(out, kGraphFileVersion);
  io::write_le<std::uint32_t>(out, n);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.frame_count()));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(g.scale_count()));
  io::write_le<std::uint8_t>(out, g.weighted() ? 1 : 0);
  io::write_le<std::uint32_t>(out, c);
  io::write_le<std::uint64_t>(out, config_hash);
  io::write_string16(out, g.video_id());
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto& node = g.nodes()[i];
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(node.frame));
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(node.scale));
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(node.position));
    io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(i) * c);
  }
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.edges().size()));
  for (const auto& e : g.edges()) {
    io::write_le<std::uint32_t>(out, e.u);
    io::write_le<std::uint32_t>(out, e.v);
    io::write_le<float>(out, static_cast<float>(e.weight));
  }
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < c; ++k)
      io::write_le<float>(out, static_cast<float>(g.features()(i, k)));
  file.commit();
}

VideoGraph read_graph_file(const std::filesystem::path& path, std::uint64_t* config_hash) {
  auto in = io::open_for_read(path, "graph file");
  io::expect_magic(in, "STRG", path.string());
  const auto version = io::read_le<std::uint16_t>(in);
  require(version == kGraphFileVersion, ErrorKind::format,
          "unsupported STRG version " + std::to_string(version));
  const auto n = io::read_le<std::uint32_t>(in);
  const auto frames = io::read_le<std::uint32_t>(in);
  const auto scales = io::read_le<std::uint16_t>(in);
  const bool weighted = io::read_le<std::uint8_t>(in) != 0;
  const auto c = io::read_le<std::uint32_t>(in);
  const auto hash = io::read_le<std::uint64_t>(in);
  if (config_hash) *config_hash = hash;
  auto id = io::read_string16(in);
  require(n > 0 && c > 0, ErrorKind::format, "empty graph file");

  std::vector<RegionNode> nodes(n);
  std::vector<std::uint64_t> offsets(n);
  for (auto i = 0u; i < n; ++i) {
    nodes[i].frame = static_cast<int>(io::read_le<std::uint32_t>(in));
    nodes[i].scale = io::read_le<std::uint16_t>(in);
    nodes[i].position = io::read_le<std::uint16_t>(in);
    offsets[i] = io::read_le<std::uint64_t>(in);
  }
  const auto edge_count = io::read_le<std::uint32_t>(in);
  std::vector<Edge> edges(edge_count);
  for (auto& e : edges) {
    e.u = io::read_le<std::uint32_t>(in);
    e.v = io::read_le<std::uint32_t>(in);
    e.weight = io::read_le<float>(in);
    require(e.u < n && e.v < n, ErrorKind::format, "edge endpoint out of range");
  }
  std::vector<float> feats(static_cast<std::size_t>(n) * c);
  in.read(reinterpret_cast<char*>(feats.data()), static_cast<std::streamsize>(feats.size() * 4));
  if (!in) fail(ErrorKind::format, "truncated graph file: " + path.string());
  for (auto i = 0u; i < n; ++i) {
    require(offsets[i] + c <= feats.size(), ErrorKind::format, "feature offset out of range");
    nodes[i].feature.resize(c);
    for (auto k = 0u; k < c; ++k) nodes[i].feature[k] = feats[offsets[i] + k];
  }
  return VideoGraph(std::move(id), static_cast<int>(frames), scales, weighted, std::move(nodes),
                    std::move(edges));
}

}  // namespace stargnn
