#include "stargnn/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

namespace {

constexpr std::uint16_t kFeatureFileVersion = 1;

template <typename T>
void hash_value(std::uint64_t& h, const T& v) {
  h = io::fnv1a(std::string_view(reinterpret_cast<const char*>(&v), sizeof(T)), h);
}

// Uniform in [0, 1) from the raw mt19937_64 stream; the engine's output
// sequence is fixed by the standard, unlike the distribution classes.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

std::uint64_t Preprocessing::fingerprint() const {
  std::uint64_t h = io::fnv1a("preprocessing");
  hash_value(h, resize_short_edge);
  hash_value(h, crop);
  for (float m : mean) hash_value(h, m);
  for (float s : stddev) hash_value(h, s);
  return h;
}

std::vector<WindowScale> default_scales() { return {{3, 2}, {4, 3}, {7, 1}}; }

// ---- backbones ----------------------------------------------------------------

RandomProjectionBackbone::RandomProjectionBackbone(int channels, std::uint64_t seed,
                                                   Preprocessing prep)
    : seed_(seed) {
  require(channels > 0, ErrorKind::config, "backbone channels must be positive");
  require(prep.crop >= patch_, ErrorKind::config, "crop smaller than backbone patch");
  spec_.name = "random_projection";
  spec_.output_channels = channels;
  spec_.grid_height = prep.crop / patch_;
  spec_.grid_width = prep.crop / patch_;
  spec_.preprocessing = prep;

  const int in_dim = patch_ * patch_ * 3;
  // Uniform entries with variance 1/in_dim.
  const double bound = std::sqrt(3.0 / in_dim);
  std::mt19937_64 rng(seed);
  projection_.resize(channels, in_dim);
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < in_dim; ++i)
      projection_(c, i) = static_cast<float>((2.0 * unit_uniform(rng) - 1.0) * bound);
}

std::uint64_t RandomProjectionBackbone::fingerprint() const {
  std::uint64_t h = io::fnv1a(spec_.name);
  hash_value(h, spec_.output_channels);
  hash_value(h, seed_);
  hash_value(h, patch_);
  return h;
}

FeatureMap RandomProjectionBackbone::extract(const FrameTensor& frame) const {
  const cv::Mat& px = frame.pixels;
  require(px.type() == CV_32FC3 && px.rows == spec_.preprocessing.crop &&
              px.cols == spec_.preprocessing.crop,
          ErrorKind::contract, "frame not preprocessed to backbone geometry");
  const int gh = spec_.grid_height;
  const int gw = spec_.grid_width;
  const int in_dim = patch_ * patch_ * 3;

  Eigen::MatrixXf patches(in_dim, gh * gw);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      float* col = patches.col(gy * gw + gx).data();
      for (int y = 0; y < patch_; ++y) {
        const float* row = px.ptr<float>(gy * patch_ + y) + gx * patch_ * 3;
        std::copy(row, row + patch_ * 3, col + y * patch_ * 3);
      }
    }
  }
  const Eigen::MatrixXf act = (projection_ * patches).cwiseMax(0.0f);

  FeatureMap map(gh, gw, spec_.output_channels, frame.frame_index);
  for (int cell = 0; cell < gh * gw; ++cell)
    for (int c = 0; c < spec_.output_channels; ++c)
      map.data[static_cast<std::size_t>(cell) * spec_.output_channels + c] = act(c, cell);
  return map;
}

PatchMeanBackbone::PatchMeanBackbone(Preprocessing prep) {
  spec_.name = "patch_mean";
  spec_.output_channels = 3;
  spec_.grid_height = prep.crop / patch_;
  spec_.grid_width = prep.crop / patch_;
  spec_.preprocessing = prep;
}

std::uint64_t PatchMeanBackbone::fingerprint() const {
  std::uint64_t h = io::fnv1a(spec_.name);
  hash_value(h, patch_);
  return h;
}

FeatureMap PatchMeanBackbone::extract(const FrameTensor& frame) const {
  const cv::Mat& px = frame.pixels;
  require(px.type() == CV_32FC3 && px.rows == spec_.preprocessing.crop &&
              px.cols == spec_.preprocessing.crop,
          ErrorKind::contract, "frame not preprocessed to backbone geometry");
  FeatureMap map(spec_.grid_height, spec_.grid_width, 3, frame.frame_index);
  for (int gy = 0; gy < spec_.grid_height; ++gy) {
    for (int gx = 0; gx < spec_.grid_width; ++gx) {
      const cv::Scalar m = cv::mean(px(cv::Rect(gx * patch_, gy * patch_, patch_, patch_)));
      for (int c = 0; c < 3; ++c) map.at(gy, gx, c) = static_cast<float>(m[c]);
    }
  }
  return map;
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, const Preprocessing& prep) {
  if (config.name == "random_projection")
    return std::make_unique<RandomProjectionBackbone>(config.channels, config.seed, prep);
  if (config.name == "patch_mean") return std::make_unique<PatchMeanBackbone>(prep);
  if (config.name == "vgg16")
    fail(ErrorKind::config, "backbone 'vgg16': pretrained weights are not available in this build");
  fail(ErrorKind::config, "unknown backbone '" + config.name + "'");
}

// ---- sampling -------------------------------------------------------------------

std::vector<double> sample_times(double duration_s, const SamplingConfig& sampling) {
  require(sampling.rate_hz > 0.0 && std::isfinite(sampling.rate_hz), ErrorKind::config,
          "rate_hz must be positive");
  require(sampling.max_frames >= 1, ErrorKind::config, "max_frames must be >= 1");
  const double interval = 1.0 / sampling.rate_hz;
  // Samples at 0, interval, 2*interval, ... strictly before the end.
  long n = static_cast<long>(std::ceil(duration_s * sampling.rate_hz - 1e-9));
  n = std::max(1L, n);

  std::vector<double> times;
  if (n <= sampling.max_frames) {
    for (long i = 0; i < n; ++i) times.push_back(static_cast<double>(i) * interval);
  } else {
    for (int m = 0; m < sampling.max_frames; ++m) {
      const long idx = static_cast<long>(m) * n / sampling.max_frames;
      times.push_back(static_cast<double>(idx) * interval);
    }
  }
  return times;
}

cv::Mat preprocess_frame(const cv::Mat& bgr, const Preprocessing& prep) {
  require(!bgr.empty(), ErrorKind::input, "empty frame");
  cv::Mat src = bgr;
  if (src.channels() == 1) cv::cvtColor(bgr, src, cv::COLOR_GRAY2BGR);
  if (src.depth() != CV_8U) src.convertTo(src, CV_8U);

  const double scale = static_cast<double>(prep.resize_short_edge) / std::min(src.rows, src.cols);
  const int w = std::max(prep.crop, static_cast<int>(std::lround(src.cols * scale)));
  const int h = std::max(prep.crop, static_cast<int>(std::lround(src.rows * scale)));
  cv::Mat resized;
  cv::resize(src, resized, cv::Size(w, h), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);

  const cv::Rect roi((w - prep.crop) / 2, (h - prep.crop) / 2, prep.crop, prep.crop);
  cv::Mat rgb;
  cv::cvtColor(resized(roi), rgb, cv::COLOR_BGR2RGB);
  cv::Mat out;
  rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
  std::vector<cv::Mat> planes;
  cv::split(out, planes);
  for (int c = 0; c < 3; ++c) planes[c] = (planes[c] - prep.mean[c]) / prep.stddev[c];
  cv::merge(planes, out);
  return out;
}

namespace {

std::vector<long> target_frames(long frame_count, double fps, const SamplingConfig& sampling,
                                std::vector<double>& times) {
  const double duration = static_cast<double>(frame_count) / fps;
  times = sample_times(duration, sampling);
  std::vector<long> targets;
  targets.reserve(times.size());
  for (double t : times)
    targets.push_back(std::min(frame_count - 1, static_cast<long>(std::floor(t * fps + 1e-9))));
  return targets;
}

}  // namespace

std::vector<FrameTensor> sample_frames(std::span<const cv::Mat> decoded, double fps,
                                       const SamplingConfig& sampling, const Preprocessing& prep) {
  if (decoded.empty()) fail(ErrorKind::empty_video, "video has no decodable frames");
  require(fps > 0.0, ErrorKind::input, "frame rate must be positive");
  std::vector<double> times;
  const auto targets = target_frames(static_cast<long>(decoded.size()), fps, sampling, times);
  std::vector<FrameTensor> frames;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    frames.push_back({preprocess_frame(decoded[static_cast<std::size_t>(targets[i])], prep),
                      static_cast<int>(i), times[i]});
  }
  return frames;
}

std::vector<FrameTensor> sample_frames(const std::filesystem::path& video,
                                       const SamplingConfig& sampling, const Preprocessing& prep) {
  if (!std::filesystem::exists(video)) fail(ErrorKind::input, "video not found: " + video.string());
  cv::VideoCapture cap(video.string());
  if (!cap.isOpened()) fail(ErrorKind::input, "cannot decode video: " + video.string());

  double fps = cap.get(cv::CAP_PROP_FPS);
  long count = static_cast<long>(cap.get(cv::CAP_PROP_FRAME_COUNT));
  if (!(fps > 0.0) || !std::isfinite(fps)) fps = 25.0;
  if (count <= 0) {
    // Container without a usable frame count: count by decoding.
    cv::Mat tmp;
    count = 0;
    while (cap.read(tmp)) ++count;
    cap.release();
    cap.open(video.string());
    if (!cap.isOpened()) fail(ErrorKind::input, "cannot reopen video: " + video.string());
  }
  if (count <= 0) fail(ErrorKind::empty_video, "video has no decodable frames: " + video.string());

  std::vector<double> times;
  const auto targets = target_frames(count, fps, sampling, times);
  std::vector<FrameTensor> frames;
  cv::Mat raw;
  long pos = -1;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    while (pos < targets[i]) {
      if (!cap.read(raw)) {
        raw.release();
        break;
      }
      ++pos;
    }
    // Metadata may overcount; stop at the real end of stream.
    if (raw.empty() || pos < targets[i]) break;
    frames.push_back({preprocess_frame(raw, prep), static_cast<int>(i), times[i]});
  }
  if (frames.empty())
    fail(ErrorKind::empty_video, "video has no decodable frames: " + video.string());
  return frames;
}

FeatureMap extract_feature_map(const FrameTensor& frame, const Backbone& backbone) {
  FeatureMap map = backbone.extract(frame);
  for (float v : map.data)
    require(std::isfinite(v), ErrorKind::numeric, "backbone produced a non-finite activation");
  return map;
}

// ---- regions --------------------------------------------------------------------

int regions_per_frame(int grid, std::span<const WindowScale> scales) {
  int total = 0;
  for (const auto& s : scales) {
    const int p = s.positions(grid);
    total += p * p;
  }
  return total;
}

std::vector<RegionNode> extract_regions(const FeatureMap& map, std::span<const WindowScale> scales) {
  require(!scales.empty(), ErrorKind::config, "at least one region scale is required");
  std::vector<RegionNode> out;
  for (std::size_t k = 0; k < scales.size(); ++k) {
    const auto& s = scales[k];
    require(s.window >= 1 && s.stride >= 1, ErrorKind::config, "window and stride must be >= 1");
    require(s.window <= map.height && s.window <= map.width, ErrorKind::config,
            "window " + std::to_string(s.window) + " larger than feature grid " +
                std::to_string(map.height) + "x" + std::to_string(map.width));
    const int ny = s.positions(map.height);
    const int nx = s.positions(map.width);
    for (int py = 0; py < ny; ++py) {
      for (int px = 0; px < nx; ++px) {
        RegionNode node;
        node.frame = map.frame_index;
        node.scale = static_cast<int>(k) + 1;
        node.position = py * nx + px;
        node.feature = Vector::Constant(map.channels, -std::numeric_limits<double>::infinity());
        for (int y = py * s.stride; y < py * s.stride + s.window; ++y)
          for (int x = px * s.stride; x < px * s.stride + s.window; ++x)
            for (int c = 0; c < map.channels; ++c)
              node.feature[c] = std::max(node.feature[c], static_cast<double>(map.at(y, x, c)));
        require(node.feature.allFinite(), ErrorKind::numeric, "non-finite region feature");
        out.push_back(std::move(node));
      }
    }
  }
  return out;
}

std::vector<RegionNode> extract_regions(std::span<const FeatureMap> maps,
                                        std::span<const WindowScale> scales) {
  std::vector<RegionNode> out;
  for (const auto& m : maps) {
    auto r = extract_regions(m, scales);
    out.insert(out.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  return out;
}

// ---- STRF ----------------------------------------------------------------------

void write_feature_file(const std::filesystem::path& path, std::span<const FeatureMap> maps) {
  require(!maps.empty(), ErrorKind::contract, "no feature maps to write");
  const auto& first = maps.front();
  for (const auto& m : maps)
    require(m.height == first.height && m.width == first.width && m.channels == first.channels,
            ErrorKind::contract, "feature maps of one video must share a shape");
  io::AtomicFile file(path);
  auto& out = file.stream();
  io::write_magic(out, "STRF");
  io::write_le<std::uint16_t>(out, kFeatureFileVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(maps.size()));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(first.height));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(first.width));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(first.channels));
  for (const auto& m : maps)
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  file.commit();
}

std::vector<FeatureMap> read_feature_file(const std::filesystem::path& path) {
  auto in = io::open_for_read(path, "feature file");
  io::expect_magic(in, "STRF", path.string());
  const auto version = io::read_le<std::uint16_t>(in);
  require(version == kFeatureFileVersion, ErrorKind::format,
          "unsupported STRF version " + std::to_string(version));
  const auto frames = io::read_le<std::uint32_t>(in);
  const auto h = io::read_le<std::uint16_t>(in);
  const auto w = io::read_le<std::uint16_t>(in);
  const auto c = io::read_le<std::uint16_t>(in);
  require(frames > 0 && h > 0 && w > 0 && c > 0, ErrorKind::format, "empty STRF header");
  std::vector<FeatureMap> maps;
  maps.reserve(frames);
  for (std::uint32_t i = 0; i < frames; ++i) {
    FeatureMap m(h, w, c, static_cast<int>(i));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!in) fail(ErrorKind::format, "truncated feature file: " + path.string());
    maps.push_back(std::move(m));
  }
  return maps;
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  bool changed = id.empty();
  for (char ch : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    out.push_back(ok ? ch : '_');
    changed |= !ok;
  }
  if (changed) out += "-" + io::hex64(io::fnv1a(id)).substr(0, 8);
  return out;
}

FeatureCache::FeatureCache(std::filesystem::path root, std::string backbone_name,
                           std::uint64_t prep_hash)
    : root_(std::move(root)), backbone_(std::move(backbone_name)), prep_hash_(prep_hash) {}

std::filesystem::path FeatureCache::path_for(const std::string& video_id) const {
  return root_ / "features" /
         (sanitize_id(video_id) + "." + backbone_ + "." + io::hex64(prep_hash_) + ".strf");
}

bool FeatureCache::contains(const std::string& video_id) const {
  try {
    return load(video_id).has_value();
  } catch (const Error&) {
    return false;
  }
}

std::optional<std::vector<FeatureMap>> FeatureCache::load(const std::string& video_id) const {
  const auto p = path_for(video_id);
  if (!std::filesystem::exists(p)) return std::nullopt;
  return read_feature_file(p);
}

void FeatureCache::store(const std::string& video_id, std::span<const FeatureMap> maps) const {
  write_feature_file(path_for(video_id), maps);
}

// ---- manifest -------------------------------------------------------------------

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::distractor: return "distractor";
  }
  return "train";
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::input, "cannot open manifest: " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
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
    require(j.is_object() && j.contains("id") && j.contains("path") && j.contains("split"),
            ErrorKind::format, where + ": manifest record needs id, path and split");
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    std::filesystem::path p = j.at("path").get<std::string>();
    e.path = p.is_relative() ? base / p : p;
    const auto split = j.at("split").get<std::string>();
    if (split == "train") e.split = Split::train;
    else if (split == "test") e.split = Split::test;
    else if (split == "distractor") e.split = Split::distractor;
    else fail(ErrorKind::format, where + ": unknown split '" + split + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  io::AtomicFile file(path);
  for (const auto& e : entries) {
    nlohmann::json j{{"id", e.id}, {"path", e.path.string()}, {"split", to_string(e.split)}};
    file.stream() << j.dump() << '\n';
  }
  file.commit();
}

}  // namespace stargnn
