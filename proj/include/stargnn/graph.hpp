#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "stargnn/ingest.hpp"

namespace stargnn {

/// Cosine similarity clamped below at 0; 0 when either vector is all-zero.
double cosine_weight(const Vector& a, const Vector& b);

struct Edge {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  double weight = 1.0;
};

/// Renormalized adjacency D^-1/2 (A + I) D^-1/2, dense below a node-count
/// threshold and sparse above it.
class Adjacency {
 public:
  static constexpr std::size_t kDefaultDenseThreshold = 2048;

  Adjacency() = default;
  static Adjacency dense(Matrix m);
  static Adjacency sparse(Eigen::SparseMatrix<double> m);

  bool is_sparse() const { return sparse_; }
  Eigen::Index size() const;

  // Returns A_hat * m.
  Matrix apply(const Matrix& m) const;
  // Returns A_hat^power * m.
  Matrix apply_power(const Matrix& m, int power) const;
  Matrix to_dense() const;

 private:
  bool sparse_ = false;
  Matrix dense_;
  Eigen::SparseMatrix<double> sparse_m_;
};

/// Weighted undirected spatio-temporal lattice graph for one video.
/// Immutable after construction; safe for concurrent reads.
class VideoGraph {
 public:
  VideoGraph() = default;
  VideoGraph(std::string video_id, int frame_count, int scale_count, bool weighted,
             std::vector<RegionNode> nodes, std::vector<Edge> edges);

  const std::string& video_id() const { return video_id_; }
  int frame_count() const { return frame_count_; }
  int scale_count() const { return scale_count_; }
  bool weighted() const { return weighted_; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<RegionNode>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  // N x C, node order.
  const Matrix& features() const { return features_; }
  Eigen::Index feature_dim() const { return features_.cols(); }

  // Built on first use.
  const Adjacency& adjacency(std::size_t dense_threshold = Adjacency::kDefaultDenseThreshold) const;

 private:
  std::string video_id_;
  int frame_count_ = 0;
  int scale_count_ = 0;
  bool weighted_ = true;
  std::vector<RegionNode> nodes_;
  std::vector<Edge> edges_;
  Matrix features_;

  struct AdjacencyCache {
    std::once_flag once;
    Adjacency value;
  };
  std::shared_ptr<AdjacencyCache> cache_ = std::make_shared<AdjacencyCache>();
};

/// Complete subgraph per frame plus complete subgraph per (scale, position)
/// across frames. Nodes are reordered frame-major, then scale, then position.
VideoGraph build_graph(std::string video_id, std::vector<RegionNode> regions, bool weighted);

Adjacency renormalized_adjacency(const VideoGraph& g,
                                 std::size_t dense_threshold = Adjacency::kDefaultDenseThreshold);

/// Same construction straight from node count and edge list.
Adjacency renormalized_adjacency(std::size_t node_count, std::span<const Edge> edges,
                                 std::size_t dense_threshold = Adjacency::kDefaultDenseThreshold);

// STRG binary format.
void write_graph_file(const std::filesystem::path& path, const VideoGraph& g,
                      std::uint64_t config_hash);
VideoGraph read_graph_file(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr);

}  // namespace stargnn
