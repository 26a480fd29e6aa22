#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>

namespace stargnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Geometry and normalization applied to each sampled frame before the backbone.
struct Preprocessing {
  int resize_short_edge = 256;
  int crop = 224;
  // RGB order, applied to pixel/255.
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};

  std::uint64_t fingerprint() const;
};

/// A sampled, preprocessed frame: CV_32FC3, RGB, crop x crop.
struct FrameTensor {
  cv::Mat pixels;
  int frame_index = 0;
  double timestamp_s = 0.0;
};

/// Backbone activation grid for one frame, stored row-major as (y, x, channel).
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  int frame_index = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, int frame = 0)
      : height(h), width(w), channels(c), frame_index(frame),
        data(static_cast<std::size_t>(h) * w * c, 0.0f) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

struct WindowScale {
  int window = 0;
  int stride = 1;

  // Positions per axis on a grid of the given size.
  int positions(int grid) const { return (grid - window) / stride + 1; }
  bool operator==(const WindowScale&) const = default;
};

/// 3x3/stride 2, 4x4/stride 3, 7x7/stride 1: 9 + 4 + 1 regions on a 7x7 grid.
std::vector<WindowScale> default_scales();

/// One max-pooled window of a frame's feature map. scale is 1-based, in the
/// order the scales were supplied; position is row-major within that scale.
struct RegionNode {
  int frame = 0;
  int scale = 1;
  int position = 0;
  Vector feature;
};

struct BackboneSpec {
  std::string name;
  int output_channels = 0;
  int grid_height = 0;
  int grid_width = 0;
  Preprocessing preprocessing;
};

/// Frozen feature extractor. Implementations must be deterministic and
/// safe to call concurrently.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual const BackboneSpec& spec() const = 0;
  virtual FeatureMap extract(const FrameTensor& frame) const = 0;
  // Identifies the weights; part of the feature-cache key.
  virtual std::uint64_t fingerprint() const = 0;
};

/// Fixed pseudo-random linear projection of each 32x32x3 patch followed by
/// ReLU. Stands in for a pretrained CNN when no weights are available.
class RandomProjectionBackbone final : public Backbone {
 public:
  RandomProjectionBackbone(int channels, std::uint64_t seed, Preprocessing prep = {});
  const BackboneSpec& spec() const override { return spec_; }
  FeatureMap extract(const FrameTensor& frame) const override;
  std::uint64_t fingerprint() const override;

 private:
  BackboneSpec spec_;
  std::uint64_t seed_;
  int patch_ = 32;
  Eigen::MatrixXf projection_;  // channels x (patch*patch*3)
};

/// Per-channel mean of each 32x32 patch (3 output channels, no nonlinearity).
class PatchMeanBackbone final : public Backbone {
 public:
  explicit PatchMeanBackbone(Preprocessing prep = {});
  const BackboneSpec& spec() const override { return spec_; }
  FeatureMap extract(const FrameTensor& frame) const override;
  std::uint64_t fingerprint() const override;

 private:
  BackboneSpec spec_;
  int patch_ = 32;
};

struct BackboneConfig {
  std::string name = "random_projection";
  int channels = 512;
  std::uint64_t seed = 7;
};

/// Throws ErrorKind::config for unknown names or backbones whose weights
/// are not shipped (e.g. "vgg16").
std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config,
                                        const Preprocessing& prep = {});

struct SamplingConfig {
  double rate_hz = 1.0;
  int max_frames = 64;
};

/// Sample timestamps (seconds) for a clip of the given duration. Always at
/// least one sample; capped at max_frames uniformly spaced samples.
std::vector<double> sample_times(double duration_s, const SamplingConfig& sampling);

/// Resize smaller edge, center crop, convert BGR8 -> normalized RGB float.
cv::Mat preprocess_frame(const cv::Mat& bgr, const Preprocessing& prep);

std::vector<FrameTensor> sample_frames(const std::filesystem::path& video,
                                       const SamplingConfig& sampling,
                                       const Preprocessing& prep = {});

/// Same contract over an already decoded BGR8 frame sequence at a fixed fps.
std::vector<FrameTensor> sample_frames(std::span<const cv::Mat> decoded, double fps,
                                       const SamplingConfig& sampling,
                                       const Preprocessing& prep = {});

FeatureMap extract_feature_map(const FrameTensor& frame, const Backbone& backbone);

std::vector<RegionNode> extract_regions(const FeatureMap& map,
                                        std::span<const WindowScale> scales);

/// Regions for a whole clip, frame-major then scale then position.
std::vector<RegionNode> extract_regions(std::span<const FeatureMap> maps,
                                        std::span<const WindowScale> scales);

int regions_per_frame(int grid, std::span<const WindowScale> scales);

// ---- feature cache (STRF) -------------------------------------------------

void write_feature_file(const std::filesystem::path& path, std::span<const FeatureMap> maps);
std::vector<FeatureMap> read_feature_file(const std::filesystem::path& path);

/// Cache directory keyed by (video id, backbone name, preprocessing hash).
class FeatureCache {
 public:
  FeatureCache(std::filesystem::path root, std::string backbone_name, std::uint64_t prep_hash);

  std::filesystem::path path_for(const std::string& video_id) const;
  bool contains(const std::string& video_id) const;
  std::optional<std::vector<FeatureMap>> load(const std::string& video_id) const;
  void store(const std::string& video_id, std::span<const FeatureMap> maps) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::string backbone_;
  std::uint64_t prep_hash_;
};

/// File-name-safe rendering of a video id.
std::string sanitize_id(const std::string& id);

// ---- dataset manifest -----------------------------------------------------

enum class Split { train, test, distractor };

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  Split split = Split::train;
};

const char* to_string(Split split);

/// JSON-lines {"id", "path", "split"}; relative paths resolve against the
/// manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

}  // namespace stargnn
