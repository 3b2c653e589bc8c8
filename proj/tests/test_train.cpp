#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "dgcnn/checkpoint.hpp"
#include "dgcnn/train_loop.hpp"

using namespace dgcnn;

namespace {

ClassifierConfig desk_tiny_config(Index classes) {
  ClassifierConfig cfg;
  cfg.k = 6;
  cfg.edgeconv_widths = {8, 8, 16};
  cfg.embed_width = 24;
  cfg.head_widths = {16, 8};
  cfg.num_classes = classes;
  return cfg;
}

SynthSpec tiny_synth() {
  SynthSpec spec;
  spec.classes = {"sphere", "cube"};
  spec.train_per_class = 12;
  spec.test_per_class = 4;
  spec.points_per_cloud = 48;
  return spec;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(cosine_lr(100, 100) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(cosine_lr(50, 100) == doctest::Approx(0.0505).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(-1, 100), ParameterError);
  CHECK_THROWS_AS(cosine_lr(101, 100), ParameterError);
}

TEST_CASE("cosine schedule is monotone non-increasing") {
  double prev = cosine_lr(0, 250);
  for (int e = 1; e <= 250; ++e) {
    double lr = cosine_lr(e, 250);
    CHECK(lr <= prev);
    CHECK(lr >= 0.001);
    CHECK(lr <= 0.1);
    prev = lr;
  }
}

TEST_CASE("sgd momentum hand iterations") {
  SgdMomentum<double> sgd;
  Tensor64 p = Tensor64::zeros({1});
  Tensor64 g = Tensor64::zeros({1});

  SUBCASE("zero gradient leaves parameters unchanged") {
    sgd.step({{&p, &g}}, 0.1);
    CHECK(p[0] == 0.0);
  }
  SUBCASE("one and two steps at g=1, lr=0.1") {
    g[0] = 1.0;
    sgd.step({{&p, &g}}, 0.1);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
    sgd.step({{&p, &g}}, 0.1);
    CHECK(p[0] == doctest::Approx(-0.29).epsilon(1e-15));  // -0.1 - 0.19
  }
  SUBCASE("non-finite gradients abort") {
    g[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(sgd.step({{&p, &g}}, 0.1), NumericError);
  }
}

TEST_CASE("augmentation identities and reproducibility") {
  Rng rng(9);
  Points pts(6, 3);
  for (Index i = 0; i < 6; ++i) pts.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);

  SUBCASE("disabled is the identity") {
    AugmentOptions opt;
    opt.enabled = false;
    Rng r(1);
    CHECK(augment(pts, opt, r) == pts);
  }
  SUBCASE("degenerate ranges are the identity") {
    AugmentOptions opt;
    opt.scale_lo = opt.scale_hi = 1.0;
    opt.shift_range = 0.0;
    opt.jitter_sigma = 0.0;
    Rng r(1);
    CHECK(augment(pts, opt, r) == pts);
  }
  SUBCASE("fixed seed reproduces the perturbation") {
    AugmentOptions opt;
    Rng r1(7), r2(7), r3(8);
    Points a = augment(pts, opt, r1);
    Points b = augment(pts, opt, r2);
    Points c = augment(pts, opt, r3);
    CHECK(a == b);
    CHECK(a != c);
  }
}

TEST_CASE("classification metrics") {
  SUBCASE("all correct") {
    auto r = classification_metrics({0, 1, 2}, {0, 1, 2}, 3);
    CHECK(r.overall_accuracy == 1.0);
    CHECK(r.mean_class_accuracy == 1.0);
  }
  SUBCASE("skewed class sizes split overall vs mean-class") {
    // class 0: 10 samples all right; class 1: 90 samples all wrong
    std::vector<Index> truth, pred;
    for (int i = 0; i < 10; ++i) { truth.push_back(0); pred.push_back(0); }
    for (int i = 0; i < 90; ++i) { truth.push_back(1); pred.push_back(0); }
    auto r = classification_metrics(pred, truth, 2);
    CHECK(r.overall_accuracy == doctest::Approx(0.10).epsilon(1e-15));
    CHECK(r.mean_class_accuracy == doctest::Approx(0.50).epsilon(1e-15));
  }
  SUBCASE("single sample is 0 or 1") {
    CHECK(classification_metrics({1}, {1}, 3).overall_accuracy == 1.0);
    CHECK(classification_metrics({0}, {1}, 3).overall_accuracy == 0.0);
  }
  SUBCASE("empty dataset is a parameter error") {
    CHECK_THROWS_AS(classification_metrics({}, {}, 3), ParameterError);
  }
  SUBCASE("classes absent from the test set do not dilute the mean") {
    auto r = classification_metrics({0, 0}, {0, 0}, 5);
    CHECK(r.mean_class_accuracy == 1.0);
  }
}

TEST_CASE("mean IoU fixtures") {
  std::vector<std::vector<Index>> parts{{0, 1}};
  SUBCASE("perfect prediction is 1") {
    auto r = miou_shapenet({{0, 0, 1, 1}}, {{0, 0, 1, 1}}, {0}, parts);
    CHECK(r.miou == 1.0);
  }
  SUBCASE("hand-computed 7/12 case") {
    // true [A,A,B,B], pred [A,B,B,B]: IoU_A = 1/2, IoU_B = 2/3
    auto r = miou_shapenet({{0, 1, 1, 1}}, {{0, 0, 1, 1}}, {0}, parts);
    CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  }
  SUBCASE("a part absent from both contributes IoU 1") {
    std::vector<std::vector<Index>> three{{0, 1, 2}};
    auto r = miou_shapenet({{0, 0, 1, 1}}, {{0, 0, 1, 1}}, {0}, three);
    CHECK(r.miou == 1.0);  // parts 0 and 1 exact, part 2 empty-empty
    auto r2 = miou_shapenet({{0, 1, 1, 1}}, {{0, 0, 1, 1}}, {0}, three);
    CHECK(r2.miou == doctest::Approx((0.5 + 2.0 / 3.0 + 1.0) / 3.0).epsilon(1e-15));
  }
  SUBCASE("labels outside the category's part set are a data error") {
    CHECK_THROWS_AS(miou_shapenet({{0, 2, 1, 1}}, {{0, 0, 1, 1}}, {0}, parts), DataError);
    CHECK_THROWS_AS(miou_shapenet({{0, 0, 1, 1}}, {{0, 2, 1, 1}}, {0}, parts), DataError);
  }
  SUBCASE("identity labeling is always 1") {
    Rng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<Index> labels;
      for (int i = 0; i < 20; ++i) labels.push_back(static_cast<Index>(rng.below(2)));
      auto r = miou_shapenet({labels}, {labels}, {0}, parts);
      CHECK(r.miou == 1.0);
    }
  }
}

TEST_CASE("side_drop keeps the far half") {
  Points pts(10, 3);
  for (Index i = 0; i < 10; ++i) pts.row(i) << 0.0, 0.0, static_cast<double>(i + 1);  // z = 1..10

  SUBCASE("drop top keeps low z") {
    Points kept = side_drop(pts, 0.5, DropSide::top);
    CHECK(kept.rows() == 5);
    CHECK(kept.col(2).maxCoeff() == 5.0);
  }
  SUBCASE("drop bottom keeps high z") {
    Points kept = side_drop(pts, 0.5, DropSide::bottom);
    CHECK(kept.rows() == 5);
    CHECK(kept.col(2).minCoeff() == 6.0);
  }
  SUBCASE("fraction 1 keeps the whole set") {
    Points kept = side_drop(pts, 1.0, DropSide::left);
    CHECK(kept.rows() == 10);
    CHECK(kept.colwise().sum() == pts.colwise().sum());
  }
  SUBCASE("invalid fraction") {
    CHECK_THROWS_AS(side_drop(pts, 0.0, DropSide::top), ParameterError);
    CHECK_THROWS_AS(side_drop(pts, 1.5, DropSide::top), ParameterError);
  }
  SUBCASE("side names parse") {
    CHECK(parse_drop_side("front") == DropSide::front);
    CHECK_THROWS_AS(parse_drop_side("above"), ParameterError);
  }
}

TEST_CASE("desk-scale training: loss decreases and runs are byte-deterministic") {
  auto spec = tiny_synth();
  auto data = synth_dataset(spec, 42);
  auto cfg = desk_tiny_config(2);
  TrainOptions opt;
  opt.epochs = 8;
  opt.batch_size = 8;
  opt.seed = 5;

  auto run = [&]() {
    Rng init(77);
    auto params = init_classifier<double>(cfg, init);
    return fit_classifier(params, cfg, data.train, &data.test, opt);
  };
  TrainResult a = run();
  TrainResult b = run();

  REQUIRE(a.curve.size() == 8);
  // identical seeds reproduce the loss curve bitwise
  for (std::size_t e = 0; e < a.curve.size(); ++e) {
    CHECK(a.curve[e].loss == b.curve[e].loss);
    CHECK(a.curve[e].accuracy == b.curve[e].accuracy);
  }
  CHECK(a.final_eval.overall_accuracy == b.final_eval.overall_accuracy);
  // sanity: the tail of the curve sits below its head
  double head = (a.curve[0].loss + a.curve[1].loss) / 2;
  double tail = (a.curve[6].loss + a.curve[7].loss) / 2;
  CHECK(tail < head);
}

TEST_CASE("random_dropout_eval") {
  auto spec = tiny_synth();
  auto data = synth_dataset(spec, 43);
  auto cfg = desk_tiny_config(2);
  Rng init(78);
  auto params = init_classifier<double>(cfg, init);

  SUBCASE("keep fraction 1 equals plain evaluation") {
    Rng r(1);
    auto plain = evaluate_classifier(params, cfg, data.test.clouds);
    auto kept = random_dropout_eval(params, cfg, data.test.clouds, 1.0, r);
    CHECK(plain.overall_accuracy == kept.overall_accuracy);
  }
  SUBCASE("fixed seed reproduces the subsets") {
    Rng r1(9), r2(9);
    auto a = random_dropout_eval(params, cfg, data.test.clouds, 0.5, r1);
    auto b = random_dropout_eval(params, cfg, data.test.clouds, 0.5, r2);
    CHECK(a.overall_accuracy == b.overall_accuracy);
  }
  SUBCASE("too few survivors is a parameter error") {
    Rng r(9);
    CHECK_THROWS_AS(random_dropout_eval(params, cfg, data.test.clouds, 0.05, r), ParameterError);
  }
}

TEST_CASE("segmenter training learns the cylinder parts") {
  SynthSpec spec;
  spec.classes = {"cylinder_parts"};
  spec.train_per_class = 16;
  spec.test_per_class = 4;
  spec.points_per_cloud = 96;
  spec.random_rotation = false;
  auto data = synth_dataset(spec, 314);

  SegmenterConfig cfg;
  cfg.k = 6;
  cfg.edgeconv_widths = {8, 8};
  cfg.embed_width = 16;
  cfg.head_widths = {16, 8};
  cfg.num_part_labels = 3;
  cfg.use_spatial_transformer = false;

  TrainOptions opt;
  opt.epochs = 10;
  opt.batch_size = 8;
  opt.seed = 3;
  opt.augment.enabled = false;

  Rng init(88);
  auto params = init_segmenter<double>(cfg, init);
  std::vector<std::vector<Index>> part_sets{{0, 1, 2}};
  auto r = fit_segmenter(params, cfg, data.train, &data.test, part_sets, opt);
  REQUIRE(r.curve.size() == 10);
  CHECK(r.curve.back().loss < r.curve.front().loss);
  CHECK(r.has_final_eval);
  CHECK(r.final_eval.overall_accuracy > 0.6);  // well above the 1/3 chance level
  CHECK(r.final_eval.miou > 0.3);
}

TEST_CASE("checkpoint round trip is exact") {
  auto cfg = desk_tiny_config(3);
  Rng init(55);
  auto params = init_classifier<double>(cfg, init);
  // nudge running stats away from their init so they round-trip too
  params.embed.bn_running_mean[0] = 0.125;

  std::string path = (std::filesystem::temp_directory_path() / "dgcnn_ckpt_test.ckpt").string();
  save_checkpoint<double>(path, params);

  Rng other(56);
  auto loaded = init_classifier<double>(cfg, other);
  load_checkpoint<double>(path, loaded);

  std::vector<std::pair<std::string, Tensor64*>> a, b;
  params.visit([&](const std::string& n, Tensor64& t, bool) { a.emplace_back(n, &t); });
  loaded.visit([&](const std::string& n, Tensor64& t, bool) { b.emplace_back(n, &t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second->vec() == b[i].second->vec());
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint mismatches are checkpoint errors") {
  auto cfg = desk_tiny_config(3);
  Rng init(57);
  auto params = init_classifier<double>(cfg, init);
  std::string path = (std::filesystem::temp_directory_path() / "dgcnn_ckpt_test2.ckpt").string();
  save_checkpoint<double>(path, params);

  SUBCASE("different architecture") {
    auto cfg2 = cfg;
    cfg2.edgeconv_widths = {8, 8, 24};
    Rng r(58);
    auto other = init_classifier<double>(cfg2, r);
    CHECK_THROWS_AS(load_checkpoint<double>(path, other), CheckpointError);
  }
  SUBCASE("wrong precision") {
    Rng r(58);
    auto f32 = init_classifier<float>(cfg, r);
    CHECK_THROWS_AS(load_checkpoint<float>(path, f32), CheckpointError);
  }
  SUBCASE("garbage file") {
    std::ofstream bad(path, std::ios::binary);
    bad << "not a checkpoint";
    bad.close();
    Rng r(58);
    auto other = init_classifier<double>(cfg, r);
    CHECK_THROWS_AS(load_checkpoint<double>(path, other), CheckpointError);
  }
  std::filesystem::remove(path);
}
