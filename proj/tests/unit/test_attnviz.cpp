#include "helpers.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "stargnn/attnviz.hpp"

using namespace stargnn;
using testutil::TempDir;

namespace {

GraphSignal rows_of(const Matrix& m) {
  GraphSignal s;
  s.values = m;
  return s;
}

}  // namespace

TEST_CASE("node attention examples") {
  Vector e(3);
  e << -1, 0, 1;
  e /= std::sqrt(2.0);
  Matrix nodes(4, 3);
  nodes << 0, 1, 2,    // same direction after centering
      5, 5, 5,         // constant row
      1, -2, 1,        // orthogonal to e
      2, 1, 0;         // opposite, clamped
  const auto s = node_attention(e, rows_of(nodes));
  REQUIRE(s.size() == 4);
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s[1] == 0.0);
  CHECK(s[2] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(s[3] == 0.0);

  // hand cosine: centered (0,-1,1) against (-1,0,1)/sqrt2 -> 1/2
  Matrix half(1, 3);
  half << 1, 0, 2;
  CHECK(node_attention(e, rows_of(half))[0] == doctest::Approx(0.5).epsilon(1e-14));

  CHECK_ERROR_KIND(node_attention(Vector::Ones(2), rows_of(nodes)), ErrorKind::contract);
  const auto zero = node_attention(Vector::Zero(3), rows_of(nodes));
  for (double v : zero) CHECK(v == 0.0);
}

TEST_CASE("node attention stays in the unit interval") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const Vector e = postprocess(testutil::random_vector(rng, 8)).vector;
    for (double v : node_attention(e, rows_of(testutil::random_matrix(rng, 30, 8)))) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("cover counts on the default scales") {
  const auto scales = default_scales();
  const auto c = cover_counts(7, scales);
  // centre cell: one 3x3 window (start 2 on each axis), all four 4x4, the full window
  CHECK(c(3, 3) == 6);
  CHECK(c(0, 0) == 3);
  CHECK(c.minCoeff() >= 1);
  // brute force
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      int n = 0;
      for (const auto& s : scales)
        for (int py = 0; py < s.positions(7); ++py)
          for (int px = 0; px < s.positions(7); ++px)
            if (y >= py * s.stride && y < py * s.stride + s.window && x >= px * s.stride &&
                x < px * s.stride + s.window)
              ++n;
      CHECK(c(y, x) == n);
    }
}

TEST_CASE("project_to_grid examples") {
  const auto scales = default_scales();
  const auto counts = cover_counts(7, scales);

  std::vector<double> only_full(14, 0.0);
  only_full[13] = 1.0;
  const auto m = project_to_grid(only_full, 4, scales, 7, AttentionMode::star_gnn);
  CHECK(m.frame == 4);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) CHECK(m.grid(y, x) == doctest::Approx(1.0 / counts(y, x)));

  std::vector<double> uniform(14, 0.37);
  const auto u = project_to_grid(uniform, 0, scales, 7, AttentionMode::static_pool);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) CHECK(u.grid(y, x) == doctest::Approx(0.37).epsilon(1e-14));

  CHECK_ERROR_KIND(project_to_grid(std::vector<double>(13, 0.0), 0, scales, 7, AttentionMode::star_gnn),
                   ErrorKind::contract);
}

TEST_CASE("projection conserves cover-weighted mass") {
  // sum over cells of grid * count equals sum over regions of score * window area
  const auto scales = default_scales();
  const auto counts = cover_counts(7, scales);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> s(14);
    for (auto& v : s) v = u(rng);
    const auto m = project_to_grid(s, 0, scales, 7, AttentionMode::star_gnn);
    double lhs = 0.0, rhs = 0.0;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) lhs += m.grid(y, x) * counts(y, x);
    std::size_t r = 0;
    for (const auto& sc : scales)
      for (int p = 0; p < sc.positions(7) * sc.positions(7); ++p) rhs += s[r++] * sc.window * sc.window;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
  }
}

TEST_CASE("per-video normalization") {
  std::vector<AttentionMap> maps(2);
  maps[0].grid = Matrix::Constant(2, 2, 0.2);
  maps[1].grid = Matrix::Constant(2, 2, 0.1);
  maps[1].grid(1, 0) = 0.4;
  normalize_per_video(maps);
  CHECK(maps[0].grid(0, 0) == doctest::Approx(0.5));
  CHECK(maps[1].grid(1, 0) == 1.0);

  std::vector<AttentionMap> zeros(1);
  zeros[0].grid = Matrix::Zero(3, 3);
  normalize_per_video(zeros);
  CHECK(zeros[0].grid.isZero());
}

TEST_CASE("attention maps for a video") {
  std::mt19937_64 rng(13);
  const auto scales = default_scales();
  const auto g = build_graph("vid", testutil::random_regions(rng, 3, 16), true);
  const auto model = GnnModel::create(OperatorKind::vanilla_gcn, {16, 8}, Aggregator::mean, 1, 5);
  for (const auto mode : {AttentionMode::star_gnn, AttentionMode::static_pool}) {
    const auto maps = attention_maps(g, scales, 7, mode, &model);
    REQUIRE(maps.size() == 3);
    double peak = 0.0;
    for (std::size_t f = 0; f < maps.size(); ++f) {
      CHECK(maps[f].frame == static_cast<int>(f));
      CHECK(maps[f].mode == mode);
      CHECK(maps[f].grid.minCoeff() >= 0.0);
      CHECK(maps[f].grid.maxCoeff() <= 1.0);
      peak = std::max(peak, maps[f].grid.maxCoeff());
    }
    CHECK(peak == doctest::Approx(1.0));
  }
  CHECK_ERROR_KIND(attention_maps(g, scales, 7, AttentionMode::star_gnn, nullptr), ErrorKind::usage);
}

TEST_CASE("static maps of identical frames are identical") {
  std::mt19937_64 rng(14);
  auto regions = testutil::random_regions(rng, 2, 12);
  for (std::size_t i = 0; i < 14; ++i) regions[14 + i].feature = regions[i].feature;
  const auto g = build_graph("twin", regions, true);
  const auto maps = attention_maps(g, default_scales(), 7, AttentionMode::static_pool, nullptr);
  REQUIRE(maps.size() == 2);
  CHECK(maps[0].grid == maps[1].grid);
}

TEST_CASE("heat intensity quantization") {
  const auto img = heat_intensity(Matrix::Constant(7, 7, 0.5), 224);
  CHECK(img.rows == 224);
  CHECK(img.cols == 224);
  CHECK(img.type() == CV_8U);
  double lo, hi;
  cv::minMaxLoc(img, &lo, &hi);
  CHECK(lo == 128.0);  // round(127.5)
  CHECK(hi == 128.0);
  Matrix over = Matrix::Constant(2, 2, 2.0);
  over(0, 0) = -1.0;
  cv::minMaxLoc(heat_intensity(over, 2), &lo, &hi);
  CHECK(lo == 0.0);
  CHECK(hi == 255.0);
}

TEST_CASE("render sequence and sidecar round trip") {
  TempDir dir;
  std::mt19937_64 rng(15);
  const auto g = build_graph("clip/a", testutil::random_regions(rng, 2, 8), false);
  const auto maps = attention_maps(g, default_scales(), 7, AttentionMode::static_pool, nullptr);
  std::vector<FrameTensor> frames(2);
  for (int f = 0; f < 2; ++f) {
    frames[f].pixels = cv::Mat(224, 224, CV_32FC3, cv::Scalar(0, 0, 0));
    frames[f].frame_index = f;
  }
  const auto written = render_sequence("clip/a", frames, maps, Preprocessing{}, RenderStyle{}, dir.path());
  REQUIRE(written.size() == 3);
  const auto stem = sanitize_id("clip/a");
  CHECK(written[0].filename() == stem + "_0000_static.png");
  CHECK(written[1].filename() == stem + "_0001_static.png");
  CHECK(written[2].filename() == stem + "_static.json");
  const cv::Mat png = cv::imread(written[0].string());
  CHECK(png.rows == 224);
  CHECK(png.cols == 224);

  const auto back = read_attention_sidecar(written[2]);
  REQUIRE(back.size() == 2);
  for (std::size_t f = 0; f < 2; ++f) {
    CHECK(back[f].frame == maps[f].frame);
    CHECK(back[f].mode == AttentionMode::static_pool);
    CHECK((back[f].grid - maps[f].grid).cwiseAbs().maxCoeff() <= 1e-12);
    // intensity rebuilt from the sidecar is within one quantization step
    cv::Mat a = heat_intensity(back[f].grid, 224), b = heat_intensity(maps[f].grid, 224), diff;
    cv::absdiff(a, b, diff);
    double hi;
    cv::minMaxLoc(diff, nullptr, &hi);
    CHECK(hi <= 1.0);
  }

  std::ifstream in(written[2]);
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("video_id") == "clip/a");
  CHECK(j.at("normalization") == "per_video_max");

  std::vector<FrameTensor> missing(1);
  missing[0].pixels = frames[0].pixels;
  missing[0].frame_index = 9;
  CHECK_ERROR_KIND(render_sequence("x", missing, maps, Preprocessing{}, RenderStyle{}, dir.path()),
                   ErrorKind::contract);
  CHECK_ERROR_KIND(read_attention_sidecar(dir / "nope.json"), ErrorKind::input);
}

TEST_CASE("attention mode names") {
  CHECK(parse_attention_mode("star_gnn") == AttentionMode::star_gnn);
  CHECK(parse_attention_mode("static") == AttentionMode::static_pool);
  CHECK(std::string(to_string(AttentionMode::static_pool)) == "static");
  CHECK_ERROR_KIND(parse_attention_mode("gradcam"), ErrorKind::usage);
}
