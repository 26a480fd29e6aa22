// stargnn: command-line front end over the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "stargnn/stargnn.h"

namespace {

struct ConfigDeleter {
  void operator()(stargnn_config* c) const { stargnn_config_free(c); }
};
struct IndexDeleter {
  void operator()(stargnn_index* i) const { stargnn_index_free(i); }
};
using ConfigPtr = std::unique_ptr<stargnn_config, ConfigDeleter>;
using IndexPtr = std::unique_ptr<stargnn_index, IndexDeleter>;

class Failure {
 public:
  explicit Failure(stargnn_status s) : status(s) {}
  stargnn_status status;
};

void check(stargnn_status s) {
  if (s == STARGNN_OK) return;
  std::cerr << "stargnn: error (" << stargnn_last_error_kind() << "): " << stargnn_last_error() << '\n';
  throw Failure(s);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string cache_dir;
};

ConfigPtr load_config(const Globals& g) {
  stargnn_config* raw = nullptr;
  check(stargnn_config_load(opt(g.config_path), &raw));
  ConfigPtr cfg(raw);
  if (!g.cache_dir.empty()) check(stargnn_config_set(cfg.get(), "cache_dir", g.cache_dir.c_str()));
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "stargnn: --set expects key=value, got '" << kv << "'\n";
      throw Failure(STARGNN_ERR_USAGE);
    }
    check(stargnn_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  return cfg;
}

IndexPtr load_index(const std::string& path) {
  stargnn_index* raw = nullptr;
  check(stargnn_index_load(path.c_str(), &raw));
  return IndexPtr(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal region-graph video retrieval"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Config override key=value (repeatable)");
  app.add_option("--cache", g.cache_dir, "Cache directory (default: $STARGNN_CACHE or ./stargnn_cache)");
  app.set_version_flag("--version", std::string(stargnn_version()));

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic near-duplicate fixture");
  std::string synth_out;
  int base_clips = 60, transforms = 4, distractors = 0;
  std::uint64_t synth_seed = 1234;
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("--base-clips", base_clips, "Number of base clips");
  synth->add_option("--transforms", transforms, "Transformed copies per base clip (1-5)");
  synth->add_option("--distractors", distractors, "Unlabeled distractor clips");
  synth->add_option("--seed", synth_seed, "Generator seed");

  // extract / graph
  std::string manifest;
  auto* extract = app.add_subcommand("extract", "Extract and cache backbone feature maps");
  extract->add_option("-m,--manifest", manifest, "Dataset manifest (JSON lines)")->required();
  auto* graph = app.add_subcommand("graph", "Build region graphs from cached features");
  graph->add_option("-m,--manifest", manifest, "Dataset manifest")->required();

  // train
  std::string relevance, checkpoint, log_path;
  double train_ratio = 0.0;
  auto* train = app.add_subcommand("train", "Train the graph network");
  train->add_option("-m,--manifest", manifest, "Dataset manifest")->required();
  train->add_option("-r,--relevance", relevance, "Relevance file (JSON lines)")->required();
  train->add_option("-o,--out", checkpoint, "Checkpoint output path")->required();
  train->add_option("--log", log_path, "Per-batch training log (JSON lines)");
  train->add_option("--train-ratio", train_ratio, "Fraction of training queries to use")
      ->check(CLI::Range(0.0, 1.0));

  // embed
  std::string split, store_out;
  bool use_static = false;
  auto* embed = app.add_subcommand("embed", "Embed manifest videos into an embedding store");
  embed->add_option("-m,--manifest", manifest, "Dataset manifest")->required();
  auto* ckpt_opt = embed->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  embed->add_flag("--static", use_static, "Static mean-pooling baseline instead of the graph network")
      ->excludes(ckpt_opt);
  embed->add_option("--split", split, "Only embed this split (train, test, distractor)");
  embed->add_option("-o,--out", store_out, "Embedding store output")->required();

  // index
  std::vector<std::string> merge_inputs;
  auto* index = app.add_subcommand("index", "Merge embedding stores into one index");
  index->add_option("inputs", merge_inputs, "Embedding stores")->required()->check(CLI::ExistingFile);
  index->add_option("-o,--out", store_out, "Merged store")->required();

  // search
  std::string index_path, query;
  std::size_t top_k = 10;
  auto* search = app.add_subcommand("search", "Rank the index against one query video");
  search->add_option("-i,--index", index_path, "Embedding store")->required();
  search->add_option("-q,--query", query, "Query video id")->required();
  search->add_option("-k,--top", top_k, "Results to return (0: all)");

  // eval
  std::size_t eval_distractors = 0;
  std::uint64_t eval_seed = 0;
  std::string report_path;
  auto* eval = app.add_subcommand("eval", "Compute mAP over a relevance file");
  eval->add_option("-i,--index", index_path, "Embedding store")->required();
  eval->add_option("-r,--relevance", relevance, "Relevance file")->required();
  eval->add_option("-m,--manifest", manifest, "Manifest providing the distractor pool");
  eval->add_option("--distractors", eval_distractors, "Distractor videos to inject");
  eval->add_option("--seed", eval_seed, "Distractor sampling seed");
  eval->add_option("--report", report_path, "Report JSON output");

  // attn
  std::string video_id, mode = "star_gnn", out_dir;
  auto* attn = app.add_subcommand("attn", "Render attention heat maps for one video");
  attn->add_option("-m,--manifest", manifest, "Dataset manifest")->required();
  attn->add_option("-v,--video", video_id, "Video id")->required();
  attn->add_option("--mode", mode, "star_gnn or static");
  attn->add_option("--checkpoint", checkpoint, "Trained checkpoint (star_gnn mode)");
  attn->add_option("-o,--out", out_dir, "Output directory")->required();

  // config
  auto* config = app.add_subcommand("config", "Print the resolved configuration and stage hashes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : STARGNN_ERR_USAGE;
  }

  try {
    if (*synth) {
      check(stargnn_synth(synth_out.c_str(), base_clips, transforms, distractors, synth_seed));
      std::cout << "wrote fixture to " << synth_out << '\n';
    } else if (*extract) {
      auto cfg = load_config(g);
      stargnn_extract_stats s{};
      check(stargnn_extract(cfg.get(), manifest.c_str(), &s));
      std::cout << "computed " << s.computed << ", cached " << s.cached << ", failed " << s.failed << '\n';
    } else if (*graph) {
      auto cfg = load_config(g);
      std::size_t built = 0, cached = 0;
      check(stargnn_build_graphs(cfg.get(), manifest.c_str(), &built, &cached));
      std::cout << "built " << built << ", cached " << cached << '\n';
    } else if (*train) {
      auto cfg = load_config(g);
      stargnn_train_summary s{};
      check(stargnn_train(cfg.get(), manifest.c_str(), relevance.c_str(), checkpoint.c_str(),
                          opt(log_path), train_ratio, &s));
      std::cout << "epochs " << s.epochs << ", final loss " << s.final_loss << ", best val mAP "
                << s.best_val_map << " (" << s.train_queries << " train / " << s.val_queries
                << " val queries)\n";
    } else if (*embed) {
      if (!use_static && checkpoint.empty()) {
        std::cerr << "stargnn: embed needs --checkpoint or --static\n";
        return STARGNN_ERR_USAGE;
      }
      auto cfg = load_config(g);
      std::size_t count = 0;
      check(stargnn_embed(cfg.get(), manifest.c_str(), use_static ? nullptr : checkpoint.c_str(),
                          opt(split), store_out.c_str(), &count));
      std::cout << "embedded " << count << " videos\n";
    } else if (*index) {
      std::vector<const char*> paths;
      for (const auto& p : merge_inputs) paths.push_back(p.c_str());
      std::size_t count = 0;
      check(stargnn_index_merge(paths.data(), paths.size(), store_out.c_str(), &count));
      std::cout << "index holds " << count << " videos\n";
    } else if (*search) {
      auto idx = load_index(index_path);
      char* json = nullptr;
      check(stargnn_index_search(idx.get(), query.c_str(), top_k, &json));
      std::cout << json << '\n';
      stargnn_string_free(json);
    } else if (*eval) {
      auto idx = load_index(index_path);
      double map = 0.0;
      check(stargnn_evaluate(idx.get(), relevance.c_str(), opt(manifest), eval_distractors, eval_seed,
                             opt(report_path), &map));
      std::printf("mAP %.6f\n", map);
    } else if (*attn) {
      auto cfg = load_config(g);
      std::size_t files = 0;
      check(stargnn_render_attention(cfg.get(), manifest.c_str(), opt(checkpoint), video_id.c_str(),
                                     mode.c_str(), out_dir.c_str(), &files));
      std::cout << "wrote " << files << " files to " << out_dir << '\n';
    } else if (*config) {
      auto cfg = load_config(g);
      char* json = nullptr;
      check(stargnn_config_to_json(cfg.get(), &json));
      std::cout << json << '\n';
      stargnn_string_free(json);
      for (const char* stage : {"features", "graphs", "model", "embeddings"}) {
        std::uint64_t h = 0;
        check(stargnn_config_hash(cfg.get(), stage, &h));
        std::printf("%s %016llx\n", stage, static_cast<unsigned long long>(h));
      }
    }
  } catch (const Failure& f) {
    return f.status;
  }
  return 0;
}
