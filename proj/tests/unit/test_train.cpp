#include "helpers.hpp"

#include <numeric>

#include "stargnn/synth.hpp"
#include "stargnn/train.hpp"

using namespace stargnn;
using testutil::random_regions;
using testutil::random_vector;
using testutil::TempDir;

namespace {

Vector unit(std::mt19937_64& rng, int d) { return postprocess(random_vector(rng, d)).vector; }

// n graphs in groups of `group` mutual positives; pairs (first, other) per group.
TrainingSet toy_set(std::mt19937_64& rng, const GnnModel& model, int n, int group, int channels) {
  TrainingSet set;
  for (int i = 0; i < n; ++i) {
    const auto g = build_graph("v" + std::to_string(i), random_regions(rng, 2, channels), true);
    set.graphs.push_back(prepare_graph(g, model));
  }
  for (int start = 0; start < n; start += group) {
    std::vector<std::string> ids;
    for (int i = start; i < std::min(n, start + group); ++i) {
      ids.push_back(set.graphs[static_cast<std::size_t>(i)].video_id);
      if (i > start) set.pairs.emplace_back(start, i);
    }
    set.positives.add_group(ids);
  }
  return set;
}

}  // namespace

TEST_CASE("triplet loss examples") {
  Vector a = Vector::Zero(2), p = Vector::Zero(2), n(2);
  n << 1, 0;
  CHECK(triplet_loss(a, p, n, 0.5) == 0.0);
  CHECK(triplet_loss(a, a, a, 0.5) == 0.5);
  // d(a,p) = 0.8, d(a,n) = 0.5.
  Vector p2(2), n2(2);
  p2 << std::sqrt(0.8), 0;
  n2 << 0, std::sqrt(0.5);
  CHECK(triplet_loss(a, p2, n2, 0.5) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("triplet loss is a hinge") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vector a = unit(rng, 6), p = unit(rng, 6), n = unit(rng, 6);
    const double margin = 0.1 * (i % 10);
    const double l = triplet_loss(a, p, n, margin);
    const double dap = (a - p).squaredNorm(), dan = (a - n).squaredNorm();
    CHECK(l >= 0.0);
    CHECK((l == 0.0) == (dap + margin <= dan));
  }
}

TEST_CASE("contrastive loss examples") {
  Vector x(2), y(2);
  x << 0.3, 0.4;
  CHECK(contrastive_loss(x, x, true, 0.5) == 0.0);
  y << 0.3, 0.6;  // sqrt(d) = 0.2
  CHECK(contrastive_loss(x, y, false, 0.5) == doctest::Approx(0.09).epsilon(1e-12));
  y << 0.3, 1.0;  // sqrt(d) = 0.6
  CHECK(contrastive_loss(x, y, false, 0.5) == 0.0);
  CHECK(contrastive_loss(x, y, true, 0.5) == doctest::Approx(0.36).epsilon(1e-12));
}

TEST_CASE("triple loss gradients match finite differences") {
  std::mt19937_64 rng(2);
  for (auto kind : {LossKind::triplet, LossKind::contrastive}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vector a = unit(rng, 4), p = unit(rng, 4);
      Vector n = unit(rng, 4);
      if (trial % 2) n = a + 0.1 * unit(rng, 4);  // inside the contrastive margin
      const LossConfig cfg{kind, 1.0};
      const auto r = triple_loss_with_grad(a, p, n, cfg);
      const double expected = kind == LossKind::triplet
                                  ? triplet_loss(a, p, n, 1.0)
                                  : contrastive_loss(a, p, true, 1.0) + contrastive_loss(a, n, false, 1.0);
      CHECK(r.value == doctest::Approx(expected).epsilon(1e-12));

      const double h = 1e-6;
      for (int which = 0; which < 3; ++which) {
        const Vector& g = which == 0 ? r.d_anchor : which == 1 ? r.d_positive : r.d_negative;
        for (int i = 0; i < 4; ++i) {
          Vector v[3] = {a, p, n};
          v[which][i] += h;
          const double up = triple_loss_with_grad(v[0], v[1], v[2], cfg).value;
          v[which][i] -= 2 * h;
          const double down = triple_loss_with_grad(v[0], v[1], v[2], cfg).value;
          CHECK(g[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1.0));
        }
      }
    }
  }
}

TEST_CASE("positive sets merge transitively") {
  PositiveSets s;
  s.add_group({"a", "b"});
  s.add_group({"c", "d"});
  CHECK(s.are_positive("a", "b"));
  CHECK_FALSE(s.are_positive("a", "c"));
  CHECK(s.are_positive("x", "x"));
  CHECK_FALSE(s.are_positive("x", "a"));
  s.add_group({"b", "c"});
  CHECK(s.are_positive("a", "d"));
  auto g = s.group_of("d");
  std::sort(g.begin(), g.end());
  CHECK(g == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(s.group_of("zzz") == std::vector<std::string>{"zzz"});
}

TEST_CASE("hardest negative mining") {
  std::mt19937_64 rng(3);
  PositiveSets pos;
  pos.add_group({"a", "b"});
  const std::vector<std::string> ids{"a", "b", "c", "d", "e"};

  // Candidate equal to the anchor and a valid negative wins at distance 0.
  std::vector<Vector> emb{unit(rng, 4), unit(rng, 4), unit(rng, 4), unit(rng, 4), unit(rng, 4)};
  emb[3] = emb[0];
  CHECK(mine_hardest_negative(0, emb, ids, pos) == 3);

  // Equidistant candidates: lowest index.
  std::vector<Vector> same(5, Vector::Ones(4));
  same[0] = Vector::Zero(4);
  CHECK(mine_hardest_negative(0, same, ids, pos) == 2);

  // Exhaustive-scan oracle on random batches of 8.
  const std::vector<std::string> ids8{"a", "b", "c", "d", "e", "f", "g", "h"};
  PositiveSets labels;
  labels.add_group({"a", "c", "f"});
  labels.add_group({"b", "h"});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vector> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(unit(rng, 3));
    for (std::size_t anchor = 0; anchor < 8; ++anchor) {
      std::size_t best = 99;
      double best_d = 1e300;
      for (std::size_t i = 0; i < 8; ++i) {
        if (i == anchor || labels.are_positive(ids8[anchor], ids8[i])) continue;
        const double d = (batch[anchor] - batch[i]).squaredNorm();
        if (d < best_d) best_d = d, best = i;
      }
      CHECK(mine_hardest_negative(anchor, batch, ids8, labels) == best);
    }
  }

  std::vector<Vector> two{unit(rng, 4), unit(rng, 4)};
  const std::vector<std::string> ab{"a", "b"};
  CHECK_ERROR_KIND(mine_hardest_negative(0, two, ab, pos), ErrorKind::mining);
}

TEST_CASE("mining is invariant to batch order") {
  std::mt19937_64 rng(4);
  PositiveSets labels;
  labels.add_group({"id0", "id1"});
  labels.add_group({"id2", "id3", "id4"});
  std::vector<std::string> ids;
  std::vector<Vector> emb;
  for (int i = 0; i < 10; ++i) {
    ids.push_back("id" + std::to_string(i));
    emb.push_back(unit(rng, 5));
  }
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> pids;
    std::vector<Vector> pemb;
    for (auto i : perm) {
      pids.push_back(ids[i]);
      pemb.push_back(emb[i]);
    }
    for (std::size_t a = 0; a < 10; ++a) {
      const auto original = mine_hardest_negative(perm[a], emb, ids, labels);
      CHECK(pids[mine_hardest_negative(a, pemb, pids, labels)] == ids[original]);
    }
  }
}

TEST_CASE("batch gradient matches finite differences") {
  std::mt19937_64 rng(5);
  for (auto loss_kind : {LossKind::triplet, LossKind::contrastive}) {
    for (auto kind : {OperatorKind::vanilla_gcn, OperatorKind::cluster_gcn, OperatorKind::sgcn}) {
      const auto model = GnnModel::create(kind, {4, 4}, Aggregator::mean, 2, 13);
      auto set = toy_set(rng, model, 4, 2, 4);
      std::vector<const PreparedGraph*> batch;
      for (const auto& g : set.graphs) batch.push_back(&g);
      const LossConfig cfg{loss_kind, 2.0};  // large margin keeps every hinge active
      const auto base = batch_loss_and_gradient(model, batch, set.pairs, set.positives, cfg);
      REQUIRE(base.loss > 0.0);

      auto loss_at = [&](const GnnModel& m) {
        // Fixed triples: hardest negatives from the unperturbed model.
        double total = 0.0;
        for (std::size_t i = 0; i < set.pairs.size(); ++i) {
          const auto [a, p] = set.pairs[i];
          const auto ea = forward_traced(set.graphs[a], m).embedding;
          const auto ep = forward_traced(set.graphs[p], m).embedding;
          const auto en = forward_traced(set.graphs[base.negatives[i]], m).embedding;
          total += triple_loss_with_grad(ea, ep, en, cfg).value;
        }
        return total / static_cast<double>(set.pairs.size());
      };
      CHECK(loss_at(model) == doctest::Approx(base.loss).epsilon(1e-12));

      const double h = 1e-4;
      for (int branch = 0; branch < (kind == OperatorKind::cluster_gcn ? 2 : 1); ++branch) {
        const Matrix& g = branch ? base.grad.layers[0].branch : base.grad.layers[0].weight;
        for (Eigen::Index i = 0; i < 4; ++i)
          for (Eigen::Index j = 0; j < 4; ++j) {
            auto up = model, down = model;
            (branch ? up.layers[0].branch : up.layers[0].weight)(i, j) += h;
            (branch ? down.layers[0].branch : down.layers[0].weight)(i, j) -= h;
            const double fd = (loss_at(up) - loss_at(down)) / (2 * h);
            CHECK(std::abs(fd - g(i, j)) / std::max({std::abs(fd), std::abs(g(i, j)), 1e-8}) < 1e-3);
          }
      }
    }
  }
}

TEST_CASE("zero margin with separated triples leaves weights unchanged") {
  std::mt19937_64 rng(6);
  const auto model = GnnModel::create(OperatorKind::vanilla_gcn, {4, 4}, Aggregator::mean, 1, 1);
  TrainingSet set;
  // Positives are exact copies, so d(a,p) = 0 < d(a,n).
  for (int i = 0; i < 3; ++i) {
    const auto regions = random_regions(rng, 2, 4);
    set.graphs.push_back(prepare_graph(build_graph("a" + std::to_string(i), regions, true), model));
    set.graphs.push_back(prepare_graph(build_graph("b" + std::to_string(i), regions, true), model));
    set.positives.add_group({"a" + std::to_string(i), "b" + std::to_string(i)});
    set.pairs.emplace_back(2 * i, 2 * i + 1);
  }
  auto state = TrainState::create(model, {}, 3);
  const auto report = train_epoch(state, set, {LossKind::triplet, 0.0}, 4);
  CHECK(report.mean_loss == 0.0);
  CHECK(state.model.layers[0].weight == model.layers[0].weight);
}

TEST_CASE("training is deterministic and resumable") {
  std::mt19937_64 rng(7);
  const auto model = GnnModel::create(OperatorKind::cluster_gcn, {5, 4}, Aggregator::mean, 1, 8);
  const auto set = toy_set(rng, model, 12, 3, 5);
  const LossConfig loss{LossKind::triplet, 0.5};
  const AdamConfig adam{.lr = 1e-2};

  auto run = [&](int epochs) {
    auto s = TrainState::create(model, adam, 99);
    std::vector<double> losses;
    for (int e = 0; e < epochs; ++e)
      train_epoch(s, set, loss, 3, [&](const BatchRecord& r) { losses.push_back(r.loss); });
    return std::make_pair(s, losses);
  };
  const auto [a, la] = run(4);
  const auto [b, lb] = run(4);
  CHECK(la == lb);
  CHECK(a.model.layers[0].weight == b.model.layers[0].weight);
  CHECK(a.step == 12);  // 8 pairs in batches of 3
  CHECK(a.epoch == 4);

  // Save after two epochs, reload, continue: same trajectory bit for bit.
  TempDir dir;
  auto first = TrainState::create(model, adam, 99);
  for (int e = 0; e < 2; ++e) train_epoch(first, set, loss, 3);
  save_train_state(dir / "mid.strw", first);
  auto resumed = load_train_state(dir / "mid.strw");
  CHECK(resumed.step == first.step);
  CHECK(resumed.rng == first.rng);
  for (int e = 0; e < 2; ++e) train_epoch(resumed, set, loss, 3);
  CHECK(resumed.model.layers[0].weight == a.model.layers[0].weight);
  CHECK(resumed.model.layers[0].branch == a.model.layers[0].branch);
  CHECK(resumed.optimizer.m[0].weight == a.optimizer.m[0].weight);
  CHECK(resumed.optimizer.v[0].branch == a.optimizer.v[0].branch);

  // The checkpoint is still a plain model file.
  CHECK(load_model(dir / "mid.strw").layers[0].weight == first.model.layers[0].weight);
}

TEST_CASE("random fill supplies negatives for single-group batches") {
  std::mt19937_64 rng(8);
  const auto model = GnnModel::create(OperatorKind::vanilla_gcn, {4, 4}, Aggregator::mean, 1, 2);
  auto set = toy_set(rng, model, 6, 3, 4);
  auto state = TrainState::create(model, {}, 5);
  // Batch size 1: each batch holds one positive pair and nothing else.
  CHECK_NOTHROW(train_epoch(state, set, {LossKind::triplet, 0.5}, 1));

  TrainingSet lonely = set;
  lonely.positives = PositiveSets();
  std::vector<std::string> all;
  for (const auto& g : lonely.graphs) all.push_back(g.video_id);
  lonely.positives.add_group(all);
  CHECK_ERROR_KIND(train_epoch(state, lonely, {LossKind::triplet, 0.5}, 2), ErrorKind::mining);
  CHECK_ERROR_KIND(train_epoch(state, TrainingSet{}, {LossKind::triplet, 0.5}, 2), ErrorKind::contract);
}

TEST_CASE("epoch loss decreases on a toy near-duplicate set") {
  // 4 base clips with 4 transformed copies each: 20 videos.
  synth::FixtureConfig fc;
  fc.base_clips = 4;
  fc.transforms_per_clip = 4;
  fc.train_fraction = 1.0;
  fc.seed = 31;
  const auto fixture = synth::generate(fc);
  REQUIRE(fixture.clips.size() == 20);

  const auto backbone = make_backbone({"random_projection", 32, 7});
  const auto model = GnnModel::create(OperatorKind::vanilla_gcn, {32, 32}, Aggregator::mean, 1, 4);
  TrainingSet set;
  std::map<std::string, std::size_t> index;
  for (const auto& clip : fixture.clips) {
    const auto frames = sample_frames(std::span<const cv::Mat>(clip.frames), clip.fps, {1.0, 64});
    std::vector<FeatureMap> maps;
    for (const auto& f : frames) maps.push_back(extract_feature_map(f, *backbone));
    const auto g = build_graph(clip.id, extract_regions(maps, default_scales()), true);
    index[clip.id] = set.graphs.size();
    set.graphs.push_back(prepare_graph(g, model));
  }
  for (const auto& q : fixture.train_queries) {
    std::vector<std::string> group{q.query};
    for (const auto& p : q.positives) {
      group.push_back(p);
      set.pairs.emplace_back(index.at(q.query), index.at(p));
    }
    set.positives.add_group(group);
  }
  REQUIRE(set.pairs.size() == 16);

  auto state = TrainState::create(model, {.lr = 1e-3}, 42);
  std::vector<double> losses;
  for (int e = 0; e < 5; ++e) losses.push_back(train_epoch(state, set, {LossKind::triplet, 0.5}, 16).mean_loss);
  INFO(losses[0], " ", losses[1], " ", losses[2], " ", losses[3], " ", losses[4]);
  for (int e = 1; e < 5; ++e) CHECK(losses[static_cast<std::size_t>(e)] < losses[static_cast<std::size_t>(e) - 1]);
}

TEST_CASE("loss kind parsing") {
  CHECK(parse_loss_kind("contrastive") == LossKind::contrastive);
  CHECK(std::string(to_string(LossKind::triplet)) == "triplet");
  CHECK_ERROR_KIND(parse_loss_kind("arcface"), ErrorKind::config);
}
