#pragma once

// Synthetic near-duplicate fixture: base clips of moving shapes plus
// transformed copies (crop, overlay, frame shuffle, logo insertion), for
// exercising the pipeline without a licensed corpus.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "stargnn/ingest.hpp"
#include "stargnn/retrieval.hpp"

namespace stargnn::synth {

enum class Transform { crop, overlay, shuffle, logo, combined };

const char* to_string(Transform t);

struct FixtureConfig {
  int base_clips = 60;
  int transforms_per_clip = 4;
  int distractors = 0;
  double train_fraction = 0.5;
  int width = 320;
  int height = 240;
  double fps = 2.0;
  double duration_s = 6.0;
  std::uint64_t seed = 1234;
};

struct Clip {
  std::string id;
  Split split = Split::train;
  double fps = 2.0;
  std::vector<cv::Mat> frames;  // BGR8
  int group = -1;               // base clip index; -1 for distractors
};

struct Fixture {
  std::vector<Clip> clips;
  std::vector<QueryRelevance> train_queries;
  std::vector<QueryRelevance> test_queries;
};

struct FixtureRelevance {
  std::vector<QueryRelevance> train;
  std::vector<QueryRelevance> test;
};

/// Query = original clip, positives = its transformed copies, negatives =
/// every other clip of the same split.
FixtureRelevance relevance(const FixtureConfig& cfg);

/// Generates clips one at a time (each base clip's copies, then the base
/// itself, then distractors). Each clip depends only on its own seed.
void for_each_clip(const FixtureConfig& cfg, const std::function<void(Clip&&)>& sink);

/// Every clip in memory; only sensible for small fixtures.
Fixture generate(const FixtureConfig& cfg);

/// One base clip and one transformed variant, exposed for tests.
Clip base_clip(const std::string& id, std::uint64_t seed, const FixtureConfig& cfg);
Clip transformed(const Clip& base, Transform t, const std::string& id, std::uint64_t seed);

/// Writes clips as MJPG .avi, manifest.jsonl, relevance.jsonl (all queries)
/// and relevance_train.jsonl / relevance_test.jsonl.
void write_fixture(const FixtureConfig& cfg, const std::filesystem::path& dir);

void write_video(const std::filesystem::path& path, const Clip& clip);

}  // namespace stargnn::synth
