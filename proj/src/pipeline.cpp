#include "stargnn/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>

#include <json.hpp>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn::pipeline {

namespace fs = std::filesystem;

std::filesystem::path cache_root(const PipelineConfig& cfg) {
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  if (const char* env = std::getenv("STARGNN_CACHE"); env && *env) return env;
  return "stargnn_cache";
}

DirectoryLock::DirectoryLock(const fs::path& dir) {
  fs::create_directories(dir);
  const auto path = dir / ".lock";
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  require(fd_ >= 0, ErrorKind::input, "cannot open lock file " + path.string());
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    fail(ErrorKind::input, "cannot lock " + path.string());
  }
}

DirectoryLock::~DirectoryLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

FeatureCache feature_cache(const PipelineConfig& cfg) {
  return FeatureCache(cache_root(cfg), cfg.backbone.name, config_hash(cfg, Stage::features));
}

namespace {

void log_extract_error(const fs::path& log, const ManifestEntry& e, const Error& err) {
  nlohmann::json j{{"id", e.id},
                   {"path", e.path.string()},
                   {"kind", to_string(err.kind())},
                   {"message", err.what()}};
  std::ofstream out(log, std::ios::app);
  out << j.dump() << '\n';
}

std::vector<FeatureMap> compute_features(const ManifestEntry& e, const PipelineConfig& cfg,
                                         const Backbone& backbone) {
  const auto frames = sample_frames(e.path, cfg.sampling(), cfg.preprocessing);
  std::vector<FeatureMap> maps;
  maps.reserve(frames.size());
  for (const auto& f : frames) maps.push_back(extract_feature_map(f, backbone));
  return maps;
}

std::map<std::string, Split> split_map(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, Split> out;
  for (const auto& e : entries) out[e.id] = e.split;
  return out;
}

Vector embedding_or_fallback(const ForwardTrace& t) {
  return t.degenerate ? fallback_embedding(t.raw.size()) : t.embedding;
}

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

ExtractStats extract(const PipelineConfig& cfg, const fs::path& manifest) {
  const auto entries = read_manifest(manifest);
  const auto backbone = make_backbone(cfg.backbone, cfg.preprocessing);
  const auto cache = feature_cache(cfg);
  DirectoryLock lock(cache.root());
  const auto error_log = cache.root() / "extract_errors.jsonl";

  ExtractStats stats;
  for (const auto& e : entries) {
    try {
      if (cache.contains(e.id)) {
        ++stats.cached;
        continue;
      }
      cache.store(e.id, compute_features(e, cfg, *backbone));
      ++stats.computed;
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::config) throw;
      ++stats.failed;
      log_extract_error(error_log, e, err);
      std::cerr << "extract: " << e.id << ": " << err.what() << '\n';
    }
  }
  if (!entries.empty() && stats.failed == entries.size())
    fail(ErrorKind::input, "feature extraction failed for all " + std::to_string(entries.size()) +
                               " videos; see " + error_log.string());
  return stats;
}

VideoGraph graph_from_cache(const PipelineConfig& cfg, const std::string& video_id) {
  const auto maps = feature_cache(cfg).load(video_id);
  if (!maps)
    fail(ErrorKind::pipeline_order,
         "no cached features for '" + video_id + "'; run extract first");
  return build_graph(video_id, extract_regions(*maps, cfg.scales), cfg.weighted);
}

fs::path graph_path(const PipelineConfig& cfg, const std::string& video_id) {
  return cache_root(cfg) / "graphs" /
         (sanitize_id(video_id) + "." + io::hex64(config_hash(cfg, Stage::graphs)) + ".strg");
}

GraphStats build_graphs(const PipelineConfig& cfg, const fs::path& manifest) {
  const auto entries = read_manifest(manifest);
  DirectoryLock lock(cache_root(cfg));
  const auto hash = config_hash(cfg, Stage::graphs);
  GraphStats stats;
  for (const auto& e : entries) {
    const auto path = graph_path(cfg, e.id);
    if (fs::exists(path)) {
      ++stats.cached;
      continue;
    }
    write_graph_file(path, graph_from_cache(cfg, e.id), hash);
    ++stats.built;
  }
  return stats;
}

VideoGraph load_graph(const PipelineConfig& cfg, const std::string& video_id) {
  const auto path = graph_path(cfg, video_id);
  const auto expected = config_hash(cfg, Stage::graphs);
  if (fs::exists(path)) {
    std::uint64_t stored = 0;
    auto g = read_graph_file(path, &stored);
    require(stored == expected, ErrorKind::config_mismatch,
            path.string() + " was built under a different configuration");
    require(g.video_id() == video_id, ErrorKind::format,
            path.string() + " holds graph '" + g.video_id() + "'");
    return g;
  }
  auto g = graph_from_cache(cfg, video_id);
  write_graph_file(path, g, expected);
  return g;
}

std::vector<QueryRelevance> subsample_queries(std::vector<QueryRelevance> queries, double ratio,
                                              std::uint64_t seed) {
  require(ratio > 0 && ratio <= 1, ErrorKind::usage, "train ratio must be in (0, 1]");
  std::sort(queries.begin(), queries.end(),
            [](const QueryRelevance& a, const QueryRelevance& b) { return a.query < b.query; });
  if (ratio >= 1.0 || queries.empty()) return queries;
  std::mt19937_64 rng(seed ^ 0x7261'7469'6f00'0000ULL);
  for (std::size_t i = queries.size(); i > 1; --i)
    std::swap(queries[i - 1], queries[static_cast<std::size_t>(rng() % i)]);
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratio * queries.size())));
  queries.resize(keep);
  std::sort(queries.begin(), queries.end(),
            [](const QueryRelevance& a, const QueryRelevance& b) { return a.query < b.query; });
  return queries;
}

TrainSummary train(const PipelineConfig& cfg, const fs::path& manifest, const fs::path& relevance,
                   const TrainOptions& opts) {
  require(!opts.checkpoint.empty(), ErrorKind::usage, "train needs a checkpoint output path");
  const auto entries = read_manifest(manifest);
  const auto splits = split_map(entries);

  std::vector<QueryRelevance> queries;
  for (auto& q : read_relevance(relevance)) {
    const auto it = splits.find(q.query);
    if (it != splits.end() && it->second == Split::train && !q.positives.empty())
      queries.push_back(std::move(q));
  }
  require(!queries.empty(), ErrorKind::usage,
          "no training queries: relevance records need a train-split query with positives");
  queries = subsample_queries(std::move(queries), opts.train_ratio.value_or(cfg.train_ratio), cfg.seed);

  // Validation queries are carved from the training queries.
  std::vector<QueryRelevance> val;
  {
    std::mt19937_64 rng(cfg.seed ^ 0x76616c00ULL);
    for (std::size_t i = queries.size(); i > 1; --i)
      std::swap(queries[i - 1], queries[static_cast<std::size_t>(rng() % i)]);
    auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * queries.size()));
    n_val = std::min(n_val, queries.size() - 1);
    val.assign(queries.end() - static_cast<std::ptrdiff_t>(n_val), queries.end());
    queries.resize(queries.size() - n_val);
  }

  std::set<std::string> held_out;
  for (const auto& q : val) {
    held_out.insert(q.query);
    held_out.insert(q.positives.begin(), q.positives.end());
  }

  // Training graphs: every video named by a training query, minus held-out groups.
  std::vector<std::string> train_ids;
  {
    std::set<std::string> ids;
    for (const auto& q : queries) {
      ids.insert(q.query);
      ids.insert(q.positives.begin(), q.positives.end());
      ids.insert(q.negatives.begin(), q.negatives.end());
    }
    for (const auto& id : ids)
      if (!held_out.count(id)) train_ids.push_back(id);
  }

  std::map<std::string, VideoGraph> graphs;
  auto graph_for = [&](const std::string& id) -> const VideoGraph& {
    auto it = graphs.find(id);
    if (it == graphs.end()) it = graphs.emplace(id, load_graph(cfg, id)).first;
    return it->second;
  };
  require(!train_ids.empty(), ErrorKind::usage, "no training videos");
  const auto input_dim = static_cast<int>(graph_for(train_ids.front()).feature_dim());

  GnnModel model = GnnModel::create(cfg.operator_kind, cfg.layer_dims(input_dim), cfg.aggregator,
                                    cfg.sgcn_power, cfg.seed);
  model.config_hash = config_hash(cfg, Stage::model);

  TrainingSet data;
  std::map<std::string, std::size_t> slot;
  for (const auto& id : train_ids) {
    slot[id] = data.graphs.size();
    data.graphs.push_back(prepare_graph(graph_for(id), model, cfg.dense_threshold));
  }
  for (const auto& q : queries) {
    std::vector<std::string> group{q.query};
    group.insert(group.end(), q.positives.begin(), q.positives.end());
    data.positives.add_group(group);
    for (const auto& p : q.positives) data.pairs.emplace_back(slot.at(q.query), slot.at(p));
  }
  for (const auto& q : val) {
    std::vector<std::string> group{q.query};
    group.insert(group.end(), q.positives.begin(), q.positives.end());
    data.positives.add_group(group);
  }

  std::vector<PreparedGraph> val_graphs;
  {
    std::set<std::string> ids;
    for (const auto& q : val) {
      ids.insert(q.query);
      ids.insert(q.positives.begin(), q.positives.end());
      ids.insert(q.negatives.begin(), q.negatives.end());
    }
    for (const auto& id : ids) val_graphs.push_back(prepare_graph(graph_for(id), model, cfg.dense_threshold));
  }
  graphs.clear();

  auto validate = [&](const GnnModel& m) {
    EmbeddingIndex index(m.output_dim());
    for (const auto& g : val_graphs) index.add({g.video_id, embedding_or_fallback(forward_traced(g, m))});
    return evaluate_map(index, val, {}).map;
  };

  std::ofstream log;
  if (!opts.log.empty()) {
    if (opts.log.has_parent_path()) fs::create_directories(opts.log.parent_path());
    log.open(opts.log, std::ios::trunc);
    require(log.good(), ErrorKind::input, "cannot open training log " + opts.log.string());
  }
  auto on_batch = [&](const BatchRecord& r) {
    if (!log.is_open()) return;
    log << nlohmann::json{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"timestamp", now_seconds()}}.dump()
        << '\n';
  };

  TrainState state = TrainState::create(model, cfg.adam(), cfg.seed);
  TrainSummary summary;
  summary.train_queries = queries.size();
  summary.val_queries = val.size();
  double best = -std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto report = train_epoch(state, data, cfg.loss(), cfg.batch_size, on_batch);
    summary.epochs = state.epoch;
    summary.final_loss = report.mean_loss;
    // Without validation queries, the lowest epoch loss stands in for the best mAP.
    const double score = val.empty() ? -report.mean_loss : validate(state.model);
    if (score > best) {
      best = score;
      stale = 0;
      state.best_val_map = val.empty() ? -1.0 : score;
      save_train_state(opts.checkpoint, state);
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  summary.best_val_map = state.best_val_map;
  return summary;
}

EmbeddingIndex embed(const PipelineConfig& cfg, const fs::path& manifest, const EmbedOptions& opts) {
  std::optional<GnnModel> model;
  if (opts.checkpoint) {
    model = load_model(*opts.checkpoint);
    require(model->config_hash == config_hash(cfg, Stage::model), ErrorKind::config_mismatch,
            "checkpoint " + opts.checkpoint->string() +
                " was trained under a different graph/model configuration");
  }
  EmbeddingIndex index;
  index.config_hash = model ? config_hash(cfg, Stage::embeddings)
                            : io::fnv1a("static", config_hash(cfg, Stage::graphs));
  for (const auto& e : read_manifest(manifest)) {
    if (opts.split && e.split != *opts.split) continue;
    const auto g = load_graph(cfg, e.id);
    try {
      index.add(model ? embed_video(g, *model) : static_embedding(g));
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::degenerate_embedding) throw;
      const auto dim = model ? model->output_dim() : g.feature_dim();
      std::cerr << "embed: degenerate embedding for '" << e.id << "', using fallback vector\n";
      index.add({e.id, fallback_embedding(dim)});
    }
  }
  return index;
}

EmbeddingIndex merge_indexes(const std::vector<EmbeddingIndex>& parts) {
  require(!parts.empty(), ErrorKind::usage, "nothing to merge");
  EmbeddingIndex out;
  out.config_hash = parts.front().config_hash;
  for (const auto& part : parts) {
    require(part.config_hash == out.config_hash, ErrorKind::config_mismatch,
            "embedding stores come from different configurations");
    for (const auto& [id, e] : part.entries()) {
      if (out.contains(id)) {
        require(out.get(id).vector == e.vector, ErrorKind::contract,
                "conflicting embeddings for '" + id + "'");
        continue;
      }
      out.add(e);
    }
  }
  return out;
}

EvaluationReport evaluate(const EmbeddingIndex& index, const fs::path& relevance, const fs::path& manifest,
                          const EvalOptions& opts) {
  const auto queries = read_relevance(relevance);
  std::vector<std::string> pool;
  if (opts.distractor_count > 0)
    for (const auto& e : read_manifest(manifest))
      if (e.split == Split::distractor) pool.push_back(e.id);
  const auto chosen = sample_distractors(pool, opts.distractor_count, opts.seed);
  auto report = evaluate_map(index, queries, std::set<std::string>(chosen.begin(), chosen.end()));
  report.seed = opts.seed;
  report.distractor_ids = chosen;
  return report;
}

std::vector<fs::path> render_attention(const PipelineConfig& cfg, const fs::path& manifest,
                                       const std::optional<fs::path>& checkpoint,
                                       const std::string& video_id, AttentionMode mode,
                                       const fs::path& out_dir) {
  const auto entries = read_manifest(manifest);
  const auto it = std::find_if(entries.begin(), entries.end(),
                               [&](const ManifestEntry& e) { return e.id == video_id; });
  if (it == entries.end()) fail(ErrorKind::lookup, "video id not in manifest: '" + video_id + "'");

  std::optional<GnnModel> model;
  if (mode == AttentionMode::star_gnn) {
    require(checkpoint.has_value(), ErrorKind::usage, "star_gnn attention needs --checkpoint");
    model = load_model(*checkpoint);
    require(model->config_hash == config_hash(cfg, Stage::model), ErrorKind::config_mismatch,
            "checkpoint " + checkpoint->string() + " does not match the configuration");
  }

  const auto maps = feature_cache(cfg).load(video_id);
  if (!maps)
    fail(ErrorKind::pipeline_order, "no cached features for '" + video_id + "'; run extract first");
  const auto g = load_graph(cfg, video_id);
  const auto frames = sample_frames(it->path, cfg.sampling(), cfg.preprocessing);
  const auto grid = maps->front().height;
  const auto attn = attention_maps(g, cfg.scales, grid, mode, model ? &*model : nullptr);
  return render_sequence(video_id, frames, attn, cfg.preprocessing, cfg.render, out_dir);
}

}  // namespace stargnn::pipeline
