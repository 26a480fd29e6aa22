#include "helpers.hpp"

#include <map>
#include <set>

#include <Eigen/Eigenvalues>

#include "stargnn/graph.hpp"

using namespace stargnn;
using testutil::random_regions;
using testutil::TempDir;

namespace {

// Dense D^-1/2 (A+I) D^-1/2 straight from the edge list.
Matrix dense_oracle(std::size_t n, const std::vector<Edge>& edges) {
  Matrix a = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& e : edges) {
    a(e.u, e.v) += e.weight;
    a(e.v, e.u) += e.weight;
  }
  Matrix out(a.rows(), a.cols());
  const Vector d = a.rowwise().sum();
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) / std::sqrt(d[i] * d[j]);
  return out;
}

std::size_t choose2(std::size_t n) { return n * (n - 1) / 2; }

}  // namespace

TEST_CASE("cosine_weight examples") {
  Vector a(2), b(2);
  a << 1, 1;
  b << 1, 0;
  CHECK(cosine_weight(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cosine_weight(a, a) == doctest::Approx(1.0));
  Vector c(2);
  c << 0, 1;
  CHECK(cosine_weight(b, c) == 0.0);
  CHECK(cosine_weight(b, -b) == 0.0);  // clamped
  CHECK(cosine_weight(b, Vector::Zero(2)) == 0.0);
  CHECK_ERROR_KIND(cosine_weight(a, Vector::Ones(3)), ErrorKind::contract);
}

TEST_CASE("edge counts") {
  std::mt19937_64 rng(1);
  for (int f : {1, 2, 3, 4, 7}) {
    const auto g = build_graph("v", random_regions(rng, f, 3), true);
    CHECK(g.node_count() == static_cast<std::size_t>(14 * f));
    CHECK(g.edges().size() == 91 * static_cast<std::size_t>(f) + 14 * choose2(f));
    CHECK(g.frame_count() == f);
    CHECK(g.scale_count() == 3);
  }
  CHECK(build_graph("v", random_regions(rng, 3, 3), false).edges().size() == 315);
}

TEST_CASE("edge set characterization by brute force") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int frames = 1 + trial % 4;
    auto regions = random_regions(rng, frames, 4);
    std::shuffle(regions.begin(), regions.end(), rng);
    const auto g = build_graph("v", regions, trial % 2 == 0);
    const auto& nodes = g.nodes();

    // Node order: frame, scale, position.
    for (std::size_t i = 1; i < nodes.size(); ++i)
      CHECK(std::tie(nodes[i - 1].frame, nodes[i - 1].scale, nodes[i - 1].position) <
            std::tie(nodes[i].frame, nodes[i].scale, nodes[i].position));

    std::map<std::pair<std::uint32_t, std::uint32_t>, double> edges;
    for (const auto& e : g.edges()) {
      CHECK(e.u != e.v);
      const auto key = std::minmax(e.u, e.v);
      CHECK(edges.count(key) == 0);
      edges[key] = e.weight;
    }
    std::size_t spatial = 0, temporal = 0;
    for (std::uint32_t u = 0; u < nodes.size(); ++u) {
      for (std::uint32_t v = u + 1; v < nodes.size(); ++v) {
        const bool same_frame = nodes[u].frame == nodes[v].frame;
        const bool same_loc = nodes[u].scale == nodes[v].scale && nodes[u].position == nodes[v].position;
        const bool connected = edges.count({u, v}) != 0;
        CHECK(connected == (same_frame || same_loc));
        CHECK_FALSE((same_frame && same_loc));
        if (!connected) continue;
        spatial += same_frame;
        temporal += same_loc;
        const double w = edges[{u, v}];
        if (g.weighted())
          CHECK(w == doctest::Approx(cosine_weight(nodes[u].feature, nodes[v].feature)).epsilon(1e-7));
        else
          CHECK(w == 1.0);
      }
    }
    CHECK(spatial == 91 * static_cast<std::size_t>(frames));
    CHECK(temporal == 14 * choose2(frames));
  }
}

TEST_CASE("weighted and unweighted share the structural edge set") {
  std::mt19937_64 rng(3);
  const auto regions = random_regions(rng, 3, 5);
  const auto w = build_graph("v", regions, true);
  const auto u = build_graph("v", regions, false);
  REQUIRE(w.edges().size() == u.edges().size());
  for (std::size_t i = 0; i < w.edges().size(); ++i) {
    CHECK(w.edges()[i].u == u.edges()[i].u);
    CHECK(w.edges()[i].v == u.edges()[i].v);
  }
}

TEST_CASE("identical frames give unit temporal weights") {
  std::mt19937_64 rng(4);
  auto regions = random_regions(rng, 1, 6);
  auto copy = regions;
  for (auto& r : copy) r.frame = 1;
  regions.insert(regions.end(), copy.begin(), copy.end());
  const auto g = build_graph("v", regions, true);
  int temporal = 0;
  for (const auto& e : g.edges()) {
    if (g.nodes()[e.u].frame == g.nodes()[e.v].frame) continue;
    CHECK(e.weight == doctest::Approx(1.0).epsilon(1e-7));
    ++temporal;
  }
  CHECK(temporal == 14);
}

TEST_CASE("frame permutation gives an isomorphic graph") {
  std::mt19937_64 rng(5);
  const int frames = 4;
  const auto regions = random_regions(rng, frames, 4);
  const std::vector<int> perm{2, 0, 3, 1};
  auto moved = regions;
  for (auto& r : moved) r.frame = perm[static_cast<std::size_t>(r.frame)];
  const auto a = build_graph("v", regions, true);
  const auto b = build_graph("v", moved, true);

  // Node i of a sits at index map[i] in b.
  const int scale_offset[4] = {0, 0, 9, 13};
  std::vector<std::uint32_t> map(a.node_count());
  for (std::uint32_t i = 0; i < a.node_count(); ++i) {
    const auto& n = a.nodes()[i];
    map[i] = static_cast<std::uint32_t>(perm[static_cast<std::size_t>(n.frame)] * 14 +
                                        scale_offset[n.scale] + n.position);
    CHECK(b.nodes()[map[i]].feature == n.feature);
  }
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> eb;
  for (const auto& e : b.edges()) eb[std::minmax(e.u, e.v)] = e.weight;
  for (const auto& e : a.edges()) {
    const auto key = std::minmax(map[e.u], map[e.v]);
    REQUIRE(eb.count(key) == 1);
    CHECK(eb[key] == e.weight);
  }
}

TEST_CASE("build_graph rejects duplicates and empty input") {
  std::mt19937_64 rng(6);
  auto regions = random_regions(rng, 2, 3);
  regions.push_back(regions[5]);
  CHECK_ERROR_KIND(build_graph("v", regions, true), ErrorKind::contract);
  CHECK_ERROR_KIND(build_graph("v", {}, true), ErrorKind::contract);
}

TEST_CASE("renormalized adjacency examples") {
  const auto single = renormalized_adjacency(1, std::vector<Edge>{});
  CHECK(single.to_dense()(0, 0) == 1.0);

  // Complete unweighted graph: every entry 1/n.
  for (std::size_t n : {2u, 5u, 14u}) {
    std::vector<Edge> edges;
    for (std::uint32_t u = 0; u < n; ++u)
      for (std::uint32_t v = u + 1; v < n; ++v) edges.push_back({u, v, 1.0});
    const Matrix a = renormalized_adjacency(n, edges).to_dense();
    CHECK((a.array() - 1.0 / static_cast<double>(n)).abs().maxCoeff() < 1e-15);
    CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-14);
  }

  // Two frames, hand-set weights.
  std::vector<Edge> edges{{0, 1, 0.5}, {0, 2, 0.25}, {1, 3, 1.0}, {2, 3, 0.75}};
  Matrix expected(4, 4);
  const double d[4] = {1.75, 2.5, 2.0, 2.75};
  const double a[4][4] = {{1, 0.5, 0.25, 0}, {0.5, 1, 0, 1}, {0.25, 0, 1, 0.75}, {0, 1, 0.75, 1}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) expected(i, j) = a[i][j] / std::sqrt(d[i] * d[j]);
  CHECK((renormalized_adjacency(4, edges).to_dense() - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("adjacency matches the dense oracle and is spectrally bounded") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 15; ++trial) {
    auto regions = random_regions(rng, 1 + trial % 5, 3);
    if (trial % 3 == 0)
      for (auto& r : regions) r.feature = testutil::random_vector(rng, 3);  // signed: clamp matters
    const auto g = build_graph("v", regions, trial % 4 != 1);
    const Matrix a = g.adjacency().to_dense();
    CHECK((a - dense_oracle(g.node_count(), g.edges())).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.minCoeff() >= 0.0);
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues();
    CHECK(ev.maxCoeff() <= 1.0 + 1e-6);
    CHECK(ev.minCoeff() >= -1.0 - 1e-6);
  }
}

TEST_CASE("sparse and dense adjacency agree") {
  std::mt19937_64 rng(8);
  const auto g = build_graph("v", random_regions(rng, 4, 3), true);
  const auto dense = renormalized_adjacency(g, 4096);
  const auto sparse = renormalized_adjacency(g, 8);
  CHECK_FALSE(dense.is_sparse());
  CHECK(sparse.is_sparse());
  CHECK((dense.to_dense() - sparse.to_dense()).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix h = testutil::random_matrix(rng, 56, 5);
  CHECK((dense.apply(h) - sparse.apply(h)).cwiseAbs().maxCoeff() < 1e-13);
  const Matrix a = dense.to_dense();
  CHECK((dense.apply_power(h, 3) - a * a * a * h).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sparse.apply_power(h, 3) - a * a * a * h).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_ERROR_KIND(dense.apply(Matrix::Zero(3, 2)), ErrorKind::contract);
}

TEST_CASE("zero-feature nodes keep only their self-loop") {
  std::mt19937_64 rng(9);
  auto regions = random_regions(rng, 2, 3);
  for (auto& r : regions)
    if (r.frame == 1) r.feature.setZero();
  const auto g = build_graph("v", regions, true);
  const Matrix a = g.adjacency().to_dense();
  for (Eigen::Index i = 14; i < 28; ++i) {
    CHECK(a(i, i) == 1.0);
    CHECK(a.row(i).sum() == 1.0);
  }
}

TEST_CASE("graph file round trip") {
  TempDir dir;
  std::mt19937_64 rng(10);
  const auto g = build_graph("clip/7", random_regions(rng, 3, 4), true);
  const auto p = dir / "g.strg";
  write_graph_file(p, g, 0xabcdef);
  std::uint64_t hash = 0;
  const auto back = read_graph_file(p, &hash);
  CHECK(hash == 0xabcdef);
  CHECK(back.video_id() == "clip/7");
  CHECK(back.frame_count() == 3);
  CHECK(back.weighted());
  REQUIRE(back.node_count() == g.node_count());
  REQUIRE(back.edges().size() == g.edges().size());
  for (std::size_t i = 0; i < g.edges().size(); ++i) {
    CHECK(back.edges()[i].u == g.edges()[i].u);
    CHECK(back.edges()[i].weight == g.edges()[i].weight);
  }
  // Features are stored as float32.
  CHECK((back.features() - g.features().cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.adjacency().to_dense() - g.adjacency().to_dense()).cwiseAbs().maxCoeff() == 0.0);

  std::filesystem::resize_file(p, std::filesystem::file_size(p) / 2);
  CHECK_ERROR_KIND(read_graph_file(p), ErrorKind::format);
}
