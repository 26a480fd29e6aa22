#include "stargnn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "stargnn/error.hpp"

namespace stargnn::synth {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
  }
  int index(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

const std::array<cv::Scalar, 10> kPalette = {
    cv::Scalar(40, 40, 220),  cv::Scalar(40, 200, 40),   cv::Scalar(220, 60, 40),
    cv::Scalar(30, 210, 230), cv::Scalar(210, 40, 210),  cv::Scalar(220, 210, 40),
    cv::Scalar(240, 240, 240), cv::Scalar(20, 20, 20),   cv::Scalar(40, 120, 250),
    cv::Scalar(130, 80, 30)};

enum class Shape { disc, box, triangle, ring, cross, diamond };
constexpr int kShapeCount = 6;

struct Sprite {
  Shape shape;
  cv::Scalar color;
  double size;
  double x, y, vx, vy;
};

void draw_sprite(cv::Mat& img, const Sprite& s, double t) {
  const double x = s.x + s.vx * t;
  const double y = s.y + s.vy * t;
  const cv::Point c(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
  const int r = static_cast<int>(s.size / 2);
  switch (s.shape) {
    case Shape::disc:
      cv::circle(img, c, r, s.color, cv::FILLED, cv::LINE_AA);
      break;
    case Shape::box:
      cv::rectangle(img, cv::Rect(c.x - r, c.y - r, 2 * r, 2 * r), s.color, cv::FILLED);
      break;
    case Shape::triangle: {
      std::vector<cv::Point> pts{{c.x, c.y - r}, {c.x - r, c.y + r}, {c.x + r, c.y + r}};
      cv::fillConvexPoly(img, pts, s.color, cv::LINE_AA);
      break;
    }
    case Shape::ring:
      cv::circle(img, c, r, s.color, std::max(3, r / 3), cv::LINE_AA);
      break;
    case Shape::cross:
      cv::rectangle(img, cv::Rect(c.x - r, c.y - r / 4, 2 * r, r / 2), s.color, cv::FILLED);
      cv::rectangle(img, cv::Rect(c.x - r / 4, c.y - r, r / 2, 2 * r), s.color, cv::FILLED);
      break;
    case Shape::diamond: {
      std::vector<cv::Point> pts{{c.x, c.y - r}, {c.x + r, c.y}, {c.x, c.y + r}, {c.x - r, c.y}};
      cv::fillConvexPoly(img, pts, s.color, cv::LINE_AA);
      break;
    }
  }
}

// Shared logo set: the same marks recur across unrelated clips.
void draw_logo(cv::Mat& img, int logo, cv::Rect box) {
  switch (logo % 3) {
    case 0:
      cv::rectangle(img, box, cv::Scalar(200, 30, 30), cv::FILLED);
      cv::putText(img, "TV", {box.x + box.width / 8, box.y + box.height * 3 / 4},
                  cv::FONT_HERSHEY_SIMPLEX, box.height / 40.0, cv::Scalar(255, 255, 255), 3);
      break;
    case 1:
      for (int i = 0; i < 4; ++i) {
        const int inset = i * box.width / 8;
        cv::rectangle(img,
                      cv::Rect(box.x + inset, box.y + inset, box.width - 2 * inset, box.height - 2 * inset),
                      i % 2 ? cv::Scalar(0, 200, 255) : cv::Scalar(0, 0, 0), cv::FILLED);
      }
      break;
    default:
      cv::circle(img, {box.x + box.width / 2, box.y + box.height / 2}, box.width / 2,
                 cv::Scalar(255, 255, 255), cv::FILLED, cv::LINE_AA);
      cv::circle(img, {box.x + box.width / 2, box.y + box.height / 2}, box.width / 3,
                 cv::Scalar(0, 0, 230), cv::FILLED, cv::LINE_AA);
      break;
  }
}

cv::Mat background(const cv::Size size, cv::Scalar top, cv::Scalar bottom) {
  cv::Mat img(size, CV_8UC3);
  for (int y = 0; y < size.height; ++y) {
    const double a = static_cast<double>(y) / std::max(1, size.height - 1);
    const cv::Scalar c = top * (1.0 - a) + bottom * a;
    img.row(y).setTo(c);
  }
  return img;
}

}  // namespace

const char* to_string(Transform t) {
  switch (t) {
    case Transform::crop: return "crop";
    case Transform::overlay: return "overlay";
    case Transform::shuffle: return "shuffle";
    case Transform::logo: return "logo";
    case Transform::combined: return "combined";
  }
  return "crop";
}

Clip base_clip(const std::string& id, std::uint64_t seed, const FixtureConfig& cfg) {
  Rng rng(seed);
  const cv::Size size(cfg.width, cfg.height);
  const cv::Scalar top = kPalette[static_cast<std::size_t>(rng.index(static_cast<int>(kPalette.size())))] * 0.5;
  const cv::Scalar bottom = kPalette[static_cast<std::size_t>(rng.index(static_cast<int>(kPalette.size())))] * 0.5;

  std::vector<Sprite> sprites;
  const int count = 4 + rng.index(3);
  for (int i = 0; i < count; ++i) {
    Sprite s;
    s.shape = static_cast<Shape>(rng.index(kShapeCount));
    s.color = kPalette[static_cast<std::size_t>(rng.index(static_cast<int>(kPalette.size())))];
    s.size = rng.uniform(0.12, 0.28) * cfg.height;
    s.x = rng.uniform(0.15, 0.85) * cfg.width;
    s.y = rng.uniform(0.15, 0.85) * cfg.height;
    // Pixels per second.
    s.vx = rng.uniform(-0.04, 0.04) * cfg.width;
    s.vy = rng.uniform(-0.04, 0.04) * cfg.height;
    sprites.push_back(s);
  }

  Clip clip;
  clip.id = id;
  clip.fps = cfg.fps;
  const int frames = std::max(1, static_cast<int>(std::lround(cfg.duration_s * cfg.fps)));
  for (int f = 0; f < frames; ++f) {
    cv::Mat img = background(size, top, bottom);
    const double t = f / cfg.fps;
    for (const auto& s : sprites) draw_sprite(img, s, t);
    clip.frames.push_back(img);
  }
  return clip;
}

Clip transformed(const Clip& base, Transform t, const std::string& id, std::uint64_t seed) {
  Rng rng(seed);
  Clip out = base;
  out.id = id;
  for (auto& f : out.frames) f = f.clone();
  const cv::Size size = base.frames.front().size();

  auto apply_crop = [&] {
    const double scale = rng.uniform(0.75, 0.88);
    const int w = static_cast<int>(size.width * scale);
    const int h = static_cast<int>(size.height * scale);
    const int x0 = rng.index(size.width - w + 1);
    const int y0 = rng.index(size.height - h + 1);
    for (auto& f : out.frames) {
      cv::Mat c;
      cv::resize(f(cv::Rect(x0, y0, w, h)), c, size, 0, 0, cv::INTER_LINEAR);
      f = c;
    }
  };
  auto apply_overlay = [&] {
    const double frac = rng.uniform(0.22, 0.32);
    const int bar_h = static_cast<int>(size.height * frac);
    const bool top = rng.index(2) == 0;
    const cv::Scalar color = kPalette[static_cast<std::size_t>(rng.index(static_cast<int>(kPalette.size())))];
    const double alpha = rng.uniform(0.55, 0.75);
    char text[32];
    std::snprintf(text, sizeof text, "NEWS %04d", rng.index(10000));
    const cv::Rect bar(0, top ? 0 : size.height - bar_h, size.width, bar_h);
    for (auto& f : out.frames) {
      cv::Mat roi = f(bar);
      cv::Mat fill(roi.size(), roi.type(), color);
      cv::addWeighted(roi, 1.0 - alpha, fill, alpha, 0.0, roi);
      cv::putText(f, text, {bar.x + 10, bar.y + bar_h * 2 / 3}, cv::FONT_HERSHEY_SIMPLEX,
                  bar_h / 45.0, cv::Scalar(255, 255, 255), 2);
    }
  };
  auto apply_shuffle = [&] {
    for (std::size_t i = out.frames.size(); i > 1; --i)
      std::swap(out.frames[i - 1], out.frames[static_cast<std::size_t>(rng.index(static_cast<int>(i)))]);
  };
  auto apply_logo = [&] {
    const int logo = rng.index(3);
    const int side = static_cast<int>(size.height * rng.uniform(0.25, 0.35));
    const int corner = rng.index(4);
    const int margin = 6;
    const int x = corner % 2 ? size.width - side - margin : margin;
    const int y = corner / 2 ? size.height - side - margin : margin;
    for (auto& f : out.frames) draw_logo(f, logo, cv::Rect(x, y, side, side));
  };

  switch (t) {
    case Transform::crop: apply_crop(); break;
    case Transform::overlay: apply_overlay(); break;
    case Transform::shuffle: apply_shuffle(); break;
    case Transform::logo: apply_logo(); break;
    case Transform::combined:
      apply_crop();
      apply_logo();
      apply_overlay();
      break;
  }
  return out;
}

namespace {

constexpr std::array<Transform, 5> kOrder = {Transform::crop, Transform::overlay, Transform::shuffle,
                                             Transform::logo, Transform::combined};

void check(const FixtureConfig& cfg) {
  require(cfg.base_clips >= 2, ErrorKind::usage, "fixture needs at least two base clips");
  require(cfg.transforms_per_clip >= 1 && cfg.transforms_per_clip <= 5, ErrorKind::usage,
          "transforms_per_clip must be in [1, 5]");
  require(cfg.distractors >= 0, ErrorKind::usage, "distractors must be >= 0");
  require(cfg.width >= 32 && cfg.height >= 32, ErrorKind::usage, "fixture frames too small");
}

// Per-clip seed, independent of how many other clips are generated.
std::uint64_t clip_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int train_bases(const FixtureConfig& cfg) {
  return std::clamp(static_cast<int>(std::lround(cfg.base_clips * cfg.train_fraction)), 0,
                    cfg.base_clips);
}

std::string base_name(int b) {
  char name[32];
  std::snprintf(name, sizeof name, "clip%03d", b);
  return name;
}

std::string group_id(int b, int k) {
  return base_name(b) + (k == 0 ? std::string("_orig") : std::string("_") + to_string(kOrder[k - 1]));
}

}  // namespace

void for_each_clip(const FixtureConfig& cfg, const std::function<void(Clip&&)>& sink) {
  check(cfg);
  const int n_train = train_bases(cfg);
  for (int b = 0; b < cfg.base_clips; ++b) {
    const Split split = b < n_train ? Split::train : Split::test;
    Clip base = base_clip(group_id(b, 0), clip_seed(cfg.seed, 1, static_cast<std::uint64_t>(b)), cfg);
    base.split = split;
    base.group = b;
    for (int k = 1; k <= cfg.transforms_per_clip; ++k) {
      Clip v = transformed(base, kOrder[static_cast<std::size_t>(k - 1)], group_id(b, k),
                           clip_seed(cfg.seed, 2 + static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(b)));
      v.split = split;
      v.group = b;
      sink(std::move(v));
    }
    sink(std::move(base));
  }
  for (int d = 0; d < cfg.distractors; ++d) {
    char name[32];
    std::snprintf(name, sizeof name, "dis%04d", d);
    const auto s = clip_seed(cfg.seed, 100, static_cast<std::uint64_t>(d));
    Clip c = transformed(base_clip(name, s, cfg), kOrder[s % kOrder.size()], name, s ^ 0x5a5a);
    c.split = Split::distractor;
    sink(std::move(c));
  }
}

FixtureRelevance relevance(const FixtureConfig& cfg) {
  check(cfg);
  const int n_train = train_bases(cfg);
  FixtureRelevance out;
  for (int b = 0; b < cfg.base_clips; ++b) {
    const bool train = b < n_train;
    QueryRelevance q;
    q.query = group_id(b, 0);
    for (int k = 1; k <= cfg.transforms_per_clip; ++k) q.positives.insert(group_id(b, k));
    for (int o = 0; o < cfg.base_clips; ++o) {
      if (o == b || (o < n_train) != train) continue;
      for (int k = 0; k <= cfg.transforms_per_clip; ++k) q.negatives.insert(group_id(o, k));
    }
    (train ? out.train : out.test).push_back(std::move(q));
  }
  return out;
}

Fixture generate(const FixtureConfig& cfg) {
  Fixture fx;
  for_each_clip(cfg, [&](Clip&& c) { fx.clips.push_back(std::move(c)); });
  auto rel = relevance(cfg);
  fx.train_queries = std::move(rel.train);
  fx.test_queries = std::move(rel.test);
  return fx;
}

void write_video(const std::filesystem::path& path, const Clip& clip) {
  require(!clip.frames.empty(), ErrorKind::contract, "clip without frames");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::VideoWriter writer(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), clip.fps,
                         clip.frames.front().size());
  require(writer.isOpened(), ErrorKind::input, "cannot open video writer: " + path.string());
  for (const auto& f : clip.frames) writer.write(f);
}


void write_fixture(const FixtureConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "videos");
  std::vector<ManifestEntry> entries;
  for_each_clip(cfg, [&](Clip&& c) {
    const auto rel = std::filesystem::path("videos") / (sanitize_id(c.id) + ".avi");
    write_video(dir / rel, c);
    entries.push_back({c.id, rel, c.split});
  });
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  write_manifest(dir / "manifest.jsonl", entries);
  const auto rel = relevance(cfg);
  std::vector<QueryRelevance> all = rel.train;
  all.insert(all.end(), rel.test.begin(), rel.test.end());
  write_relevance(dir / "relevance.jsonl", all);
  write_relevance(dir / "relevance_train.jsonl", rel.train);
  write_relevance(dir / "relevance_test.jsonl", rel.test);
}

}  // namespace stargnn::synth
