#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stargnn/gnn.hpp"

namespace stargnn {

/// video id -> embedding, all of one dimension and all satisfying the
/// zero-mean / unit-norm contract.
class EmbeddingIndex {
 public:
  static constexpr double kContractTolerance = 1e-6;

  EmbeddingIndex() = default;
  explicit EmbeddingIndex(Eigen::Index dim) : dim_(dim) {}

  void add(VideoEmbedding embedding);
  const VideoEmbedding& get(const std::string& id) const;
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  std::size_t size() const { return entries_.size(); }
  Eigen::Index dim() const { return dim_; }
  const std::map<std::string, VideoEmbedding>& entries() const { return entries_; }

  std::uint64_t config_hash = 0;

 private:
  Eigen::Index dim_ = 0;
  std::map<std::string, VideoEmbedding> entries_;
};

bool satisfies_embedding_contract(const Vector& v, double tol = EmbeddingIndex::kContractTolerance);

struct ScoredId {
  std::string id;
  double score = 0.0;
};

/// Cosine score, descending; ties by ascending id.
std::vector<ScoredId> rank(const Vector& query, const EmbeddingIndex& index,
                           const std::set<std::string>& candidate_ids);

double average_precision(std::span<const std::string> ranked_ids,
                         const std::set<std::string>& positives);

struct QueryRelevance {
  std::string query;
  std::set<std::string> positives;
  std::set<std::string> negatives;
};

struct EvaluationReport {
  double map = 0.0;
  std::map<std::string, double> per_query;
  std::size_t distractor_count = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> distractor_ids;
};

/// Candidates per query = positives + labeled negatives + distractors.
EvaluationReport evaluate_map(const EmbeddingIndex& index, std::span<const QueryRelevance> queries,
                              const std::set<std::string>& distractor_ids);

/// First `count` ids of a seeded shuffle of the sorted pool, so larger counts
/// under one seed are supersets of smaller ones.
std::vector<std::string> sample_distractors(std::vector<std::string> pool, std::size_t count,
                                            std::uint64_t seed);

// Relevance file: JSON-lines {"query", "positives", "negatives"}.
std::vector<QueryRelevance> read_relevance(const std::filesystem::path& path);
void write_relevance(const std::filesystem::path& path, std::span<const QueryRelevance> queries);

// Embedding store (STRE).
void save_index(const std::filesystem::path& path, const EmbeddingIndex& index);
EmbeddingIndex load_index(const std::filesystem::path& path);

void write_report(const std::filesystem::path& path, const EvaluationReport& report);

}  // namespace stargnn
