#include "stargnn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

namespace {
constexpr std::uint16_t kStoreVersion = 1;
}

bool satisfies_embedding_contract(const Vector& v, double tol) {
  return v.size() > 0 && v.allFinite() && std::abs(v.mean()) <= tol && std::abs(v.norm() - 1.0) <= tol;
}

void EmbeddingIndex::add(VideoEmbedding embedding) {
  if (dim_ == 0) dim_ = embedding.vector.size();
  require(embedding.vector.size() == dim_, ErrorKind::contract,
          "embedding '" + embedding.video_id + "' has dim " + std::to_string(embedding.vector.size()) +
              ", index dim is " + std::to_string(dim_));
  require(satisfies_embedding_contract(embedding.vector), ErrorKind::contract,
          "embedding '" + embedding.video_id + "' is not zero-mean unit-norm");
  auto id = embedding.video_id;
  entries_.insert_or_assign(std::move(id), std::move(embedding));
}

const VideoEmbedding& EmbeddingIndex::get(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) fail(ErrorKind::lookup, "video id not in index: '" + id + "'");
  return it->second;
}

std::vector<ScoredId> rank(const Vector& query, const EmbeddingIndex& index,
                           const std::set<std::string>& candidate_ids) {
  std::vector<ScoredId> out;
  out.reserve(candidate_ids.size());
  for (const auto& id : candidate_ids) {
    const auto& e = index.get(id);
    require(e.vector.size() == query.size(), ErrorKind::contract, "query/index dimension mismatch");
    out.push_back({id, query.dot(e.vector)});
  }
  std::sort(out.begin(), out.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

double average_precision(std::span<const std::string> ranked_ids, const std::set<std::string>& positives) {
  require(!positives.empty(), ErrorKind::contract, "average_precision: empty positive set");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked_ids.size(); ++r) {
    if (positives.count(ranked_ids[r])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(positives.size());
}

EvaluationReport evaluate_map(const EmbeddingIndex& index, std::span<const QueryRelevance> queries,
                              const std::set<std::string>& distractor_ids) {
  require(!queries.empty(), ErrorKind::contract, "evaluate_map: no queries");
  EvaluationReport report;
  report.distractor_count = distractor_ids.size();
  report.distractor_ids.assign(distractor_ids.begin(), distractor_ids.end());
  double sum = 0.0;
  for (const auto& q : queries) {
    std::set<std::string> candidates = q.positives;
    candidates.insert(q.negatives.begin(), q.negatives.end());
    candidates.insert(distractor_ids.begin(), distractor_ids.end());
    candidates.erase(q.query);
    const auto ranked = rank(index.get(q.query).vector, index, candidates);
    std::vector<std::string> ids;
    ids.reserve(ranked.size());
    for (const auto& r : ranked) ids.push_back(r.id);
    const double ap = average_precision(ids, q.positives);
    report.per_query[q.query] = ap;
    sum += ap;
  }
  report.map = sum / static_cast<double>(queries.size());
  return report;
}

std::vector<std::string> sample_distractors(std::vector<std::string> pool, std::size_t count,
                                            std::uint64_t seed) {
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  require(count <= pool.size(), ErrorKind::usage,
          "requested " + std::to_string(count) + " distractors but only " +
              std::to_string(pool.size()) + " available");
  std::mt19937_64 rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(pool[i - 1], pool[j]);
  }
  pool.resize(count);
  return pool;
}

// ---- files ---------------------------------------------------------------------

std::vector<QueryRelevance> read_relevance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::input, "cannot open relevance file: " + path.string());
  std::vector<QueryRelevance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, where + ": " + e.what());
    }
    require(j.is_object() && j.contains("query") && j.contains("positives"), ErrorKind::format,
            where + ": relevance record needs query and positives");
    QueryRelevance q;
    q.query = j.at("query").get<std::string>();
    for (const auto& p : j.at("positives")) q.positives.insert(p.get<std::string>());
    if (j.contains("negatives"))
      for (const auto& n : j.at("negatives")) q.negatives.insert(n.get<std::string>());
    q.positives.erase(q.query);
    q.negatives.erase(q.query);
    for (const auto& p : q.positives)
      require(!q.negatives.count(p), ErrorKind::format,
              where + ": '" + p + "' listed as both positive and negative");
    out.push_back(std::move(q));
  }
  return out;
}

void write_relevance(const std::filesystem::path& path, std::span<const QueryRelevance> queries) {
  io::AtomicFile file(path);
  for (const auto& q : queries) {
    nlohmann::json j{{"query", q.query},
                     {"positives", std::vector<std::string>(q.positives.begin(), q.positives.end())},
                     {"negatives", std::vector<std::string>(q.negatives.begin(), q.negatives.end())}};
    file.stream() << j.dump() << '\n';
  }
  file.commit();
}

void save_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
  io::AtomicFile file(path);
  auto& out = file.stream();
  io::write_magic(out, "STRE");
  io::write_le<std::uint16_t>(out, kStoreVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(index.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(index.dim()));
  io::write_le<std::uint64_t>(out, index.config_hash);
  for (const auto& [id, e] : index.entries()) {
    io::write_string16(out, id);
    for (Eigen::Index k = 0; k < e.vector.size(); ++k)
      io::write_le<float>(out, static_cast<float>(e.vector[k]));
  }
  file.commit();
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  auto in = io::open_for_read(path, "embedding store");
  io::expect_magic(in, "STRE", path.string());
  const auto version = io::read_le<std::uint16_t>(in);
  require(version == kStoreVersion, ErrorKind::format, "unsupported STRE version");
  const auto count = io::read_le<std::uint32_t>(in);
  const auto dim = io::read_le<std::uint32_t>(in);
  EmbeddingIndex index(dim);
  index.config_hash = io::read_le<std::uint64_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    VideoEmbedding e;
    e.video_id = io::read_string16(in);
    e.vector.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) e.vector[k] = io::read_le<float>(in);
    index.add(std::move(e));
  }
  return index;
}

void write_report(const std::filesystem::path& path, const EvaluationReport& report) {
  nlohmann::json per_query = nlohmann::json::object();
  for (const auto& [q, ap] : report.per_query) per_query[q] = ap;
  nlohmann::json j{{"map", report.map},
                   {"per_query", per_query},
                   {"distractor_count", report.distractor_count},
                   {"seed", report.seed},
                   {"distractor_ids", report.distractor_ids}};
  io::AtomicFile file(path);
  file.stream() << j.dump(2) << '\n';
  file.commit();
}

}  // namespace stargnn
