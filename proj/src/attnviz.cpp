#include "stargnn/attnviz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

const char* to_string(AttentionMode mode) {
  return mode == AttentionMode::star_gnn ? "star_gnn" : "static";
}

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "star_gnn") return AttentionMode::star_gnn;
  if (s == "static") return AttentionMode::static_pool;
  fail(ErrorKind::usage, "unknown attention mode '" + s + "' (expected star_gnn or static)");
}

std::vector<double> node_attention(const Vector& embedding, const GraphSignal& node_outputs) {
  require(embedding.size() == node_outputs.dim(), ErrorKind::contract,
          "node_attention: embedding dim " + std::to_string(embedding.size()) + " != node dim " +
              std::to_string(node_outputs.dim()));
  const double en = embedding.norm();
  std::vector<double> scores(static_cast<std::size_t>(node_outputs.nodes()), 0.0);
  if (en == 0.0) return scores;
  for (Eigen::Index i = 0; i < node_outputs.nodes(); ++i) {
    const Vector row = node_outputs.values.row(i).transpose();
    const Vector centered = row.array() - row.mean();
    const double n = centered.norm();
    const double scale = row.cwiseAbs().maxCoeff();
    if (!(n > 1e-10 * scale) || n == 0.0) continue;
    scores[static_cast<std::size_t>(i)] = std::clamp(embedding.dot(centered) / (en * n), 0.0, 1.0);
  }
  return scores;
}

Eigen::MatrixXi cover_counts(int grid, std::span<const WindowScale> scales) {
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(grid, grid);
  for (const auto& s : scales) {
    const int n = s.positions(grid);
    for (int py = 0; py < n; ++py)
      for (int px = 0; px < n; ++px)
        counts.block(py * s.stride, px * s.stride, s.window, s.window).array() += 1;
  }
  return counts;
}

AttentionMap project_to_grid(std::span<const double> frame_scores, int frame,
                             std::span<const WindowScale> scales, int grid, AttentionMode mode) {
  const int expected = regions_per_frame(grid, scales);
  require(static_cast<int>(frame_scores.size()) == expected, ErrorKind::contract,
          "project_to_grid: expected " + std::to_string(expected) + " region scores, got " +
              std::to_string(frame_scores.size()));
  Matrix sum = Matrix::Zero(grid, grid);
  std::size_t r = 0;
  for (const auto& s : scales) {
    const int n = s.positions(grid);
    for (int py = 0; py < n; ++py)
      for (int px = 0; px < n; ++px)
        sum.block(py * s.stride, px * s.stride, s.window, s.window).array() += frame_scores[r++];
  }
  const Eigen::MatrixXi counts = cover_counts(grid, scales);
  AttentionMap map;
  map.frame = frame;
  map.mode = mode;
  map.grid = Matrix::Zero(grid, grid);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x)
      if (counts(y, x) > 0) map.grid(y, x) = sum(y, x) / counts(y, x);
  return map;
}

void normalize_per_video(std::vector<AttentionMap>& maps) {
  double peak = 0.0;
  for (const auto& m : maps) peak = std::max(peak, m.grid.maxCoeff());
  if (peak <= 0.0) return;
  for (auto& m : maps) m.grid /= peak;
}

std::vector<AttentionMap> attention_maps(const VideoGraph& g, std::span<const WindowScale> scales,
                                         int grid, AttentionMode mode, const GnnModel* model) {
  GraphSignal nodes;
  Vector embedding;
  if (mode == AttentionMode::star_gnn) {
    require(model != nullptr, ErrorKind::usage, "star_gnn attention needs a trained model");
    nodes = node_outputs(g, *model);
    try {
      embedding = postprocess(aggregate(nodes, model->aggregator), g.video_id()).vector;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate_embedding) throw;
      embedding = fallback_embedding(nodes.dim());
    }
  } else {
    nodes.values = g.features();
    try {
      embedding = static_embedding(g).vector;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate_embedding) throw;
      embedding = fallback_embedding(nodes.dim());
    }
  }
  const auto scores = node_attention(embedding, nodes);

  std::map<int, std::vector<double>> per_frame;
  for (std::size_t i = 0; i < g.nodes().size(); ++i) per_frame[g.nodes()[i].frame].push_back(scores[i]);
  std::vector<AttentionMap> maps;
  for (const auto& [frame, s] : per_frame) maps.push_back(project_to_grid(s, frame, scales, grid, mode));
  normalize_per_video(maps);
  return maps;
}

cv::Mat heat_intensity(const Matrix& grid, int size) {
  cv::Mat src(static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), CV_64F);
  for (int y = 0; y < src.rows; ++y)
    for (int x = 0; x < src.cols; ++x) src.at<double>(y, x) = std::clamp(grid(y, x), 0.0, 1.0);
  cv::Mat up;
  cv::resize(src, up, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  cv::Mat out;
  up.convertTo(out, CV_8U, 255.0);
  return out;
}

namespace {

cv::Mat to_bgr8(const FrameTensor& frame, const Preprocessing& prep) {
  std::vector<cv::Mat> planes;
  cv::split(frame.pixels, planes);
  for (int c = 0; c < 3; ++c) planes[c] = planes[c] * prep.stddev[c] + prep.mean[c];
  cv::Mat rgb;
  cv::merge(planes, rgb);
  cv::Mat rgb8;
  rgb.convertTo(rgb8, CV_8UC3, 255.0);
  cv::Mat bgr;
  cv::cvtColor(rgb8, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

std::vector<std::filesystem::path> render_sequence(const std::string& video_id,
                                                   std::span<const FrameTensor> frames,
                                                   std::span<const AttentionMap> maps,
                                                   const Preprocessing& prep, const RenderStyle& style,
                                                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto stem = sanitize_id(video_id);
  std::vector<std::filesystem::path> written;
  nlohmann::json sidecar_frames = nlohmann::json::array();
  std::string mode_name;
  for (const auto& map : maps) {
    mode_name = to_string(map.mode);
    const auto it = std::find_if(frames.begin(), frames.end(),
                                 [&](const FrameTensor& f) { return f.frame_index == map.frame; });
    require(it != frames.end(), ErrorKind::contract,
            "no sampled frame " + std::to_string(map.frame) + " for '" + video_id + "'");
    const cv::Mat base = to_bgr8(*it, prep);
    cv::Mat heat;
    cv::applyColorMap(heat_intensity(map.grid, base.rows), heat, style.colormap);
    cv::Mat blended;
    cv::addWeighted(base, 1.0 - style.alpha, heat, style.alpha, 0.0, blended);

    char name[64];
    std::snprintf(name, sizeof name, "_%04d_", map.frame);
    const auto png = out_dir / (stem + name + mode_name + ".png");
    require(cv::imwrite(png.string(), blended), ErrorKind::input, "cannot write " + png.string());
    written.push_back(png);

    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index y = 0; y < map.grid.rows(); ++y) {
      std::vector<double> row(static_cast<std::size_t>(map.grid.cols()));
      for (Eigen::Index x = 0; x < map.grid.cols(); ++x) row[static_cast<std::size_t>(x)] = map.grid(y, x);
      rows.push_back(row);
    }
    sidecar_frames.push_back({{"frame_index", map.frame}, {"grid", rows}});
  }
  if (maps.empty()) return written;
  nlohmann::json sidecar{{"video_id", video_id},
                         {"mode", mode_name},
                         {"normalization", "per_video_max"},
                         {"alpha", style.alpha},
                         {"colormap", style.colormap},
                         {"frames", sidecar_frames}};
  const auto json_path = out_dir / (stem + "_" + mode_name + ".json");
  io::AtomicFile file(json_path);
  file.stream() << sidecar.dump(2) << '\n';
  file.commit();
  written.push_back(json_path);
  return written;
}

std::vector<AttentionMap> read_attention_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::input, "cannot open attention sidecar: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  const auto mode = parse_attention_mode(j.at("mode").get<std::string>());
  std::vector<AttentionMap> out;
  for (const auto& f : j.at("frames")) {
    AttentionMap m;
    m.frame = f.at("frame_index").get<int>();
    m.mode = mode;
    const auto& rows = f.at("grid");
    m.grid.resize(static_cast<Eigen::Index>(rows.size()),
                  rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t y = 0; y < rows.size(); ++y)
      for (std::size_t x = 0; x < rows[y].size(); ++x)
        m.grid(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = rows[y][x].get<double>();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace stargnn
