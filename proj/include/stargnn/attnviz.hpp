#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stargnn/gnn.hpp"

namespace stargnn {

enum class AttentionMode { star_gnn, static_pool };

const char* to_string(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& s);

struct AttentionMap {
  int frame = 0;
  AttentionMode mode = AttentionMode::star_gnn;
  Matrix grid;  // H_f x W_f
};

/// Cosine between the video embedding and each node's zero-mean/L2 feature,
/// clamped to [0, 1]. Constant node rows score 0.
std::vector<double> node_attention(const Vector& embedding, const GraphSignal& node_outputs);

/// Windows covering each cell of a grid x grid map.
Eigen::MatrixXi cover_counts(int grid, std::span<const WindowScale> scales);

/// Scores of one frame's regions (scale-major, row-major positions) spread
/// back onto the grid: each cell gets the mean score of the windows covering it.
AttentionMap project_to_grid(std::span<const double> frame_scores, int frame,
                             std::span<const WindowScale> scales, int grid,
                             AttentionMode mode);

/// Divide every grid by the largest cell value across the video.
void normalize_per_video(std::vector<AttentionMap>& maps);

/// All per-frame maps for one video graph, normalized per video.
std::vector<AttentionMap> attention_maps(const VideoGraph& g, std::span<const WindowScale> scales,
                                         int grid, AttentionMode mode, const GnnModel* model);

struct RenderStyle {
  double alpha = 0.5;
  int colormap = 2;  // cv::COLORMAP_JET
};

/// Bilinear upsampling of a grid in [0,1] to size x size, quantized to 8 bits.
cv::Mat heat_intensity(const Matrix& grid, int size);

/// Writes {video_id}_{frame:04d}_{mode}.png per frame and {video_id}_{mode}.json.
std::vector<std::filesystem::path> render_sequence(const std::string& video_id,
                                                   std::span<const FrameTensor> frames,
                                                   std::span<const AttentionMap> maps,
                                                   const Preprocessing& prep,
                                                   const RenderStyle& style,
                                                   const std::filesystem::path& out_dir);

std::vector<AttentionMap> read_attention_sidecar(const std::filesystem::path& path);

}  // namespace stargnn
