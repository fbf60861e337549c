#include <doctest.h>

#include <cmath>
#include <set>

#include "drseg/error.hpp"
#include "drseg/gradcheck.hpp"
#include "drseg/metrics.hpp"
#include "drseg/sweep.hpp"
#include "drseg/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace drseg;

namespace {

struct Small {
  Dataset data;
  RunConfig cfg;
  ChannelPartition part;
  std::vector<PreparedScene> prepared;
};

Small small_problem(std::size_t scenes = 4, double noise = 0.0) {
  Small s;
  SceneParams p;
  p.h = p.w = 8;
  p.channels = 16;
  p.dino_dim = 8;
  p.noise = noise;
  s.data = from_synthetic(generate_dataset(scenes, p, 3));
  s.cfg.embed_dim = 8;
  s.cfg.edge_hidden = 8;
  s.cfg.top_k = 10;
  s.cfg.steps = 10;
  s.cfg.batch_size = 2;
  s.part = compute_partition(s.data, s.cfg);
  s.prepared = prepare_dataset(s.data, s.part, s.cfg);
  return s;
}

EvalReport report_of(const std::vector<LabelGrid>& truth, const std::vector<LabelGrid>& pred, int n) {
  ConfusionMatrix cm(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return make_report(cm);
}

} // namespace

TEST_CASE("hand confusion matrix") {
  LabelGrid t(2, 2), p(2, 2);
  t.data = {0, 0, 1, 1};
  p.data = {0, 1, 1, 1};
  const auto r = report_of({t}, {p}, 2);
  CHECK(r.confusion == std::vector<std::vector<std::uint64_t>>{{1, 1}, {0, 2}});
  CHECK(r.iou[0] == doctest::Approx(50.0));
  CHECK(r.iou[1] == doctest::Approx(200.0 / 3.0));
  CHECK(std::abs(r.miou - 58.33) <= 0.01);
  CHECK(r.macc == doctest::Approx(75.0));
}

TEST_CASE("perfect prediction scores 100") {
  std::mt19937_64 rng(1);
  const auto g = testing::random_labels(6, 6, 3, rng);
  const auto r = report_of({g}, {g}, 5);
  CHECK(r.miou == 100.0);
  CHECK(r.macc == 100.0);
  CHECK(r.fwiou == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(std::isnan(r.iou[3]));
  CHECK(std::isnan(r.accuracy[4]));
}

TEST_CASE("metrics equal a brute-force pixel counter") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + static_cast<int>(rng() % 5);
    std::vector<LabelGrid> truth, pred;
    for (std::size_t g = 0; g < 1 + rng() % 3; ++g) {
      const std::size_t h = 1 + rng() % 64, w = 1 + rng() % 64;
      truth.push_back(testing::random_labels(h, w, n, rng));
      pred.push_back(testing::random_labels(h, w, n - (t % 3 == 0), rng));
    }
    const auto r = report_of(truth, pred, n);
    const auto b = oracle::brute_metrics(truth, pred, n);
    CHECK(r.miou == doctest::Approx(b.miou).epsilon(1e-12));
    CHECK(r.macc == doctest::Approx(b.macc).epsilon(1e-12));
    CHECK(r.fwiou == doctest::Approx(b.fwiou).epsilon(1e-12));
    for (std::size_t k = 0; k < r.confusion.size(); ++k) {
      std::uint64_t row = 0, want = 0;
      for (auto v : r.confusion[k]) row += v;
      for (const auto& g : truth)
        for (int v : g.data) want += v == static_cast<int>(k);
      CHECK(row == want);
    }
    CHECK(r.miou >= 0.0);
    CHECK(r.miou <= 100.0);
  }
}

TEST_CASE("metric input validation") {
  CHECK_THROWS_AS(ConfusionMatrix(0), ArgumentError);
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(LabelGrid(2, 2, 0), LabelGrid(2, 3, 0)), DimensionError);
  CHECK_THROWS_AS(cm.add(LabelGrid(2, 2, 0), LabelGrid(2, 2, 2)), ArgumentError);
  CHECK_THROWS_AS(make_report(cm), ArgumentError);
  ConfusionMatrix a(2), b(2);
  a.add(LabelGrid(1, 2, 0), LabelGrid(1, 2, 1));
  b.add(LabelGrid(1, 2, 1), LabelGrid(1, 2, 1));
  a.merge(b);
  CHECK(a.at(0, 1) == 2);
  CHECK(a.at(1, 1) == 2);
  CHECK(a.total() == 4);
  CHECK_THROWS_AS(a.merge(ConfusionMatrix(3)), DimensionError);
}

TEST_CASE("report JSON and table") {
  LabelGrid t(1, 3), p(1, 3);
  t.data = {0, 1, 1};
  p.data = {0, 1, 0};
  const auto r = report_of({t}, {p}, 3);
  const auto j = to_json(r);
  CHECK(j["per_class_iou"][2].is_null());
  CHECK(j["mIoU"].get<double>() == doctest::Approx(r.miou));
  const auto table = format_table(r, {"road", "tree", "car"});
  CHECK(table.find("tree") != std::string::npos);
  CHECK(table.find("mIoU") != std::string::npos);
}

TEST_CASE("uniform logits give ln N cross-entropy") {
  std::mt19937_64 rng(3);
  const auto labels = testing::random_labels(5, 5, 4, rng);
  FeatureMap d;
  CHECK(cross_entropy(FeatureMap(5, 5, 4, 0.3), labels, &d) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (std::size_t i = 0; i < 25; ++i)
    for (int k = 0; k < 4; ++k)
      CHECK(d.data[i * 4 + k] == doctest::Approx((0.25 - (labels.data[i] == k)) / 25.0));
  CHECK_THROWS_AS(cross_entropy(FeatureMap(5, 5, 4), LabelGrid(5, 5, 4)), ArgumentError);
  CHECK_THROWS_AS(cross_entropy(FeatureMap(5, 5, 4), LabelGrid(4, 5, 0)), DimensionError);
}

TEST_CASE("pack and unpack round trip") {
  HeadDims d{4, 5, 6, 2, 3};
  auto p = HeadParameters::init(d, 9);
  CHECK(p.dims() == d);
  const auto flat = p.pack();
  CHECK(flat.size() == p.count());
  const std::size_t edge = 8 * 5 + 5 + 5 + 1, gcn = 2 * 36 + 12,
                    fusion = 2 + 4 * 3 + 3 * 9 + 3 + 3 * 25 + 3 + 3 * 6 + 3 + 3 + 1;
  CHECK(p.count() == edge + gcn + fusion);
  auto q = HeadParameters::zeros(d);
  q.unpack(flat);
  CHECK(q == p);
  CHECK(q.pack() == flat);
  CHECK_THROWS_AS(q.unpack(std::vector<double>(3)), DimensionError);

  testing::TempDir dir("head");
  save_head(p, dir / "head.json");
  CHECK(load_head(dir / "head.json") == p);
  CHECK_THROWS_AS(load_head(dir / "missing.json"), IoError);
}

TEST_CASE("AdamW step against a hand-computed update") {
  AdamW opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.01;
  AdamWState st(opt, 2);
  std::vector<double> x{1.0, -2.0};
  st.step(x, std::vector<double>{0.5, 0.0});
  // First step: m_hat = g, v_hat = g^2, so the Adam part is lr * sign(g) (up to eps).
  CHECK(x[0] == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(-2.0 + 0.1 * 0.01 * 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(st.step(x, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto s = small_problem();
  s.cfg.learning_rate = 0.0;
  s.cfg.weight_decay = 1e-4;
  const auto init = HeadParameters::init(head_dims(s.data, s.part, s.cfg), 1);
  const auto r = train(s.prepared, s.data.text, s.part, init, s.cfg);
  CHECK(r.params == init);
  REQUIRE(r.loss_trace.size() == 10);
  // With a cyclic batch of 2 over 4 scenes the losses alternate between two values.
  for (std::size_t i = 2; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] == r.loss_trace[i - 2]);
}

TEST_CASE("training is deterministic and lowers the loss") {
  auto s = small_problem();
  s.cfg.steps = 40;
  s.cfg.learning_rate = 5e-3;
  const auto init = HeadParameters::init(head_dims(s.data, s.part, s.cfg), 2);
  const auto a = train(s.prepared, s.data.text, s.part, init, s.cfg);
  const auto b = train(s.prepared, s.data.text, s.part, init, s.cfg, 2);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.params == b.params);
  const auto sm = smooth_trace(a.loss_trace);
  CHECK(sm.back() < sm.front());
  CHECK_THROWS_AS(train({}, s.data.text, s.part, init, s.cfg), ArgumentError);
}

TEST_CASE("non-finite loss aborts training") {
  auto s = small_problem();
  auto init = HeadParameters::init(head_dims(s.data, s.part, s.cfg), 2);
  init.fusion.score_w[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(s.prepared, s.data.text, s.part, init, s.cfg), DivergenceError);
}

TEST_CASE("trailing mean smoothing") {
  const std::vector<double> t{4, 2, 6, 8};
  CHECK(smooth_trace(t, 2) == std::vector<double>{4, 3, 4, 7});
  CHECK(smooth_trace(t, 10) == std::vector<double>{4, 3, 4, 5});
  CHECK(smooth_trace({}).empty());
}

TEST_CASE("pipeline is deterministic and evaluation covers every pixel") {
  auto s = small_problem();
  const auto params = HeadParameters::init(head_dims(s.data, s.part, s.cfg), 4);
  const auto a = forward_pipeline(s.prepared[0], s.data.text, s.part, params, s.cfg);
  const auto b = forward_pipeline(s.prepared[0], s.data.text, s.part, params, s.cfg);
  CHECK(a.logits == b.logits);
  CHECK(forward_pipeline(s.data.scenes[0], s.data.text, s.part, params, s.cfg) == a.logits);
  const auto r = evaluate(s.data, s.part, params, s.cfg);
  std::uint64_t total = 0;
  for (const auto& row : r.confusion)
    for (auto v : row) total += v;
  CHECK(total == 4 * 64);
}

TEST_CASE("loss_and_grad agrees with batch_loss") {
  auto s = small_problem();
  const auto params = HeadParameters::init(head_dims(s.data, s.part, s.cfg), 5);
  std::vector<const PreparedScene*> batch{&s.prepared[0], &s.prepared[1]};
  const auto lg = loss_and_grad(batch, s.data.text, s.part, params, s.cfg);
  CHECK(lg.loss == doctest::Approx(batch_loss(batch, s.data.text, s.part, params, s.cfg)).epsilon(1e-12));
  CHECK(lg.grad.size() == params.count());
  CHECK(loss_and_grad(batch, s.data.text, s.part, params, s.cfg, 2).grad == lg.grad);
}

TEST_CASE("gradient check: passes, catches a corrupted block, and infinite tolerance always passes") {
  const auto inst = make_gradcheck_instance(RunConfig{});
  const auto ok = gradcheck(inst);
  CHECK(ok.passed);
  CHECK(ok.max_rel_error < 1e-4);
  std::set<std::string> names;
  for (const auto& b : ok.blocks) names.insert(b.name);
  for (const char* n : {"edge.w1", "edge.b2", "gcn.w0", "gcn.w1", "gcn.gamma", "gcn.beta", "fusion.gate_a",
                        "fusion.fuse_w", "fusion.score_b", "input.f_str", "input.c_ori", "input.c_ref"})
    CHECK(names.count(n) == 1);

  GradcheckOptions bad;
  bad.corrupt = [](const std::string& block, std::span<double> g) {
    if (block == "gcn.w1")
      for (double& v : g) v = 1.01 * v + 1e-3;
  };
  const auto caught = gradcheck(inst, bad);
  CHECK_FALSE(caught.passed);
  for (const auto& b : caught.blocks) CHECK(b.passed == (b.name != "gcn.w1"));

  bad.tolerance = std::numeric_limits<double>::infinity();
  CHECK(gradcheck(inst, bad).passed);
  CHECK(to_json(gradcheck(inst, bad))["tolerance"] == "inf");
}

TEST_CASE("sweep axes") {
  CHECK(parse_sweep_axis("rho") == SweepAxis::rho);
  CHECK(parse_sweep_axis("fusion_mode") == SweepAxis::fusion_mode);
  CHECK_THROWS_AS(parse_sweep_axis("lr"), ArgumentError);
  CHECK(default_sweep_values(SweepAxis::rho) == std::vector<std::string>{"0.3", "0.4", "0.5", "0.6", "0.7"});
  CHECK(default_sweep_values(SweepAxis::fusion_mode).size() == 4);

  auto s = small_problem(2);
  const auto noisy = with_prior_noise(s.data, 0.5, 1);
  CHECK(noisy.scenes[0].dino.data != s.data.scenes[0].dino.data);
  CHECK(noisy.scenes[0].canonical() == s.data.scenes[0].canonical());
  CHECK(with_prior_noise(s.data, 0.0, 1).scenes[0].dino == s.data.scenes[0].dino);
}

TEST_CASE("a tiny sweep yields one report per value") {
  auto s = small_problem(2);
  s.cfg.steps = 2;
  const auto cells = ablation_sweep(SweepAxis::rho, {"0.25", "0.75"}, s.data, s.data, s.cfg);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].sem_channels == 4);
  CHECK(cells[1].sem_channels == 12);
  CHECK(cells[0].config.seed == cells[1].config.seed);
  CHECK(format_sweep_table(cells).find("0.75") != std::string::npos);
  CHECK_THROWS_AS(ablation_sweep(SweepAxis::top_k, {"2.5"}, s.data, s.data, s.cfg), ArgumentError);
  CHECK_THROWS_AS(ablation_sweep(SweepAxis::rho, {}, s.data, s.data, s.cfg), ArgumentError);
}
