#include <doctest.h>

#include <cmath>

#include <boost/math/distributions/binomial.hpp>

#include "support.hpp"
#include "vdc/augment.hpp"
#include "vdc/config.hpp"
#include "vdc/evalproto.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/select.hpp"

using namespace vdc;
using namespace vdc::eval;

namespace {

struct Fixture {
  data::Dataset train, val;
  nn::TrainedModel teacher;
  data::CondensedSet condensed;  // ipc 1, T_c 8
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    data::MicroSpec ms;
    ms.per_class = 10;
    ms.seed = 51;
    x.train = data::generate_micro_dataset(ms);
    ms.seed = 52;
    x.val = data::generate_micro_dataset(ms);
    const auto net = nn::Network::build(testing::small_spec());
    nn::ExpertConfig ec;
    ec.epochs = 8;
    ec.lr = 0.05;
    x.teacher = nn::train_expert(net, x.train, ec, 3).final_model("teacher");
    x.condensed = select::select_random(x.train, 1, 8, 9);
    return x;
  }();
  return f;
}

EvalConfig quick(data::LabelingMode mode, int epochs) {
  EvalConfig c;
  c.labeling = mode;
  c.epochs = epochs;
  c.seeds = {0, 1};
  return c;
}

Tensor<float> row(std::initializer_list<float> v) {
  Tensor<float> t({1, v.size()});
  std::copy(v.begin(), v.end(), t.data.begin());
  return t;
}

}  // namespace

TEST_CASE("batch size scales the base batch by ipc") {
  for (int base = 1; base <= 12; ++base) {
    for (int ipc = 1; ipc <= 50; ++ipc) {
      EvalConfig c;
      c.base_batch = base;
      CHECK(batch_size(c, ipc) == base * ipc);
    }
  }
  EvalConfig c;
  CHECK(batch_size(c, 5) == 50);
  CHECK_THROWS_AS(batch_size(c, 0), ConfigError);
  CHECK(iterations_per_epoch(40, 10) == 4);
  CHECK(iterations_per_epoch(41, 10) == 5);
  CHECK(iterations_per_epoch(4, 40) == 1);
}

TEST_CASE("config parsing, validation and fingerprint") {
  const auto cfg = Config::parse(
      "[eval]\nlabeling = multi_sl\nloss = kl\ncutmix = true\nbase_batch = 4\nepochs = 7\nseeds = 3,4\n");
  const auto e = eval_config_from(cfg, "eval");
  CHECK(e.labeling == data::LabelingMode::multi_sl);
  CHECK(e.loss == EvalLoss::kl);
  CHECK(e.cutmix);
  CHECK(e.base_batch == 4);
  CHECK(e.epochs == 7);
  CHECK(e.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK_THROWS_AS(eval_config_from(Config::parse("[eval]\nloss = l1\n"), "eval"), ConfigError);

  EvalConfig bad;
  bad.min_crop_area = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = EvalConfig{};
  bad.seeds.clear();
  CHECK_THROWS_AS(validate(bad), ConfigError);

  EvalConfig a, b;
  CHECK(fingerprint(a) == fingerprint(b));
  b.gt_weight = 0.2;
  CHECK(fingerprint(a) != fingerprint(b));
}

TEST_CASE("evaluation loss on hand examples") {
  const int hard0[1] = {0};
  const auto soft = data::LabelingMode::soft;
  // student (1,0), teacher (0,1): mse term mean_k (z - t)^2 = 1
  const double a = eval_loss(EvalLoss::mse_gt, soft, row({1, 0}), row({0, 1}), hard0, 0.1, nullptr);
  CHECK(a == doctest::Approx(1.0 + 0.1 * std::log(1 + std::exp(-1.0))).epsilon(1e-6));
  // swapped roles put the hard label on the smaller logit
  const double b = eval_loss(EvalLoss::mse_gt, soft, row({0, 1}), row({1, 0}), hard0, 0.1, nullptr);
  CHECK(b == doctest::Approx(1.0 + 0.1 * std::log(1 + std::exp(1.0))).epsilon(1e-6));
  // equal logits leave only the cross-entropy term
  const double c = eval_loss(EvalLoss::mse_gt, soft, row({0.3f, -0.2f}), row({0.3f, -0.2f}), hard0, 0.1, nullptr);
  CHECK(c == doctest::Approx(0.1 * std::log(1 + std::exp(-0.5))).epsilon(1e-6));

  CHECK(std::abs(eval_loss(EvalLoss::kl, soft, row({2, -1, 0.5f}), row({2, -1, 0.5f}), hard0, 0.1, nullptr)) < 1e-6);
  // KL(p || q), p = softmax(0,1), q = softmax(1,0)
  const double p1 = 1 / (1 + std::exp(-1.0)), p0 = 1 - p1;
  const double kl = p0 * std::log(p0 / p1) + p1 * std::log(p1 / p0);
  CHECK(eval_loss(EvalLoss::kl, soft, row({1, 0}), row({0, 1}), hard0, 0.1, nullptr) ==
        doctest::Approx(kl).epsilon(1e-5));

  // Hard labeling is plain cross-entropy whatever the loss mode.
  const double h = eval_loss(EvalLoss::mse_gt, data::LabelingMode::hard, row({1, 0, 0, 0}), row({0, 0, 0, 0}), hard0,
                             0.1, nullptr);
  CHECK(h == doctest::Approx(std::log(std::exp(1.0) + 3) - 1).epsilon(1e-6));

  CHECK_THROWS_AS(eval_loss(EvalLoss::kl, soft, row({1, 0}), row({1, 0, 0}), hard0, 0.1, nullptr), DomainError);
}

TEST_CASE("evaluation loss gradient agrees with finite differences") {
  Rng rng(4);
  Tensor<float> z({3, 4}), t({3, 4});
  for (auto& v : z.data) v = static_cast<float>(rng.uniform(-2, 2));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-2, 2));
  const int hard[3] = {1, 3, 0};
  for (const auto mode : {EvalLoss::mse_gt, EvalLoss::kl}) {
    Tensor<float> g;
    eval_loss(mode, data::LabelingMode::multi_sl, z, t, hard, 0.1, &g);
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      const float h = 1e-2f;
      zp.data[i] += h;
      zm.data[i] -= h;
      const double fd = (eval_loss(mode, data::LabelingMode::multi_sl, zp, t, hard, 0.1, nullptr) -
                         eval_loss(mode, data::LabelingMode::multi_sl, zm, t, hard, 0.1, nullptr)) /
                        (2 * h);
      CHECK(std::abs(fd - g.data[i]) < 1e-3);
    }
  }
}

TEST_CASE("label providers: hard, soft and multi soft labels") {
  const auto& f = fixture();
  const auto& set = f.condensed;
  const int K = set.data.num_classes;
  REQUIRE(K == 4);

  const LabelProvider hard(data::LabelingMode::hard, set, nullptr);
  int item2 = -1;
  for (std::size_t i = 0; i < set.data.items.size(); ++i) {
    if (set.data.items[i].hard_label == 2) item2 = static_cast<int>(i);
  }
  REQUIRE(item2 >= 0);
  const auto plan = temporal::make_plan(8, 8);
  const auto clip = temporal::extract_clip(set.data.items[static_cast<std::size_t>(item2)].frames, plan,
                                           temporal::center_window(plan));
  CHECK(hard.label(item2, clip) == std::vector<float>{0, 0, 1, 0});
  CHECK(hard.table_checksum() == 0);

  // Two differently cropped views of one item.
  Rng rng(6);
  const auto v1 = aug::resized_crop(clip, aug::random_crop_box(16, 16, 0.5, rng));
  auto v2 = aug::horizontal_flip(aug::resized_crop(clip, aug::random_crop_box(16, 16, 0.5, rng)));
  const LabelProvider multi(data::LabelingMode::multi_sl, set, &f.teacher);
  const auto m1 = multi.label(item2, v1);
  const auto m2 = multi.label(item2, v2);
  CHECK(m1.size() == static_cast<std::size_t>(K));
  CHECK(m1 != m2);
  CHECK(multi.label(item2, v1) == m1);

  const LabelProvider soft(data::LabelingMode::soft, set, &f.teacher);
  CHECK(soft.label(item2, v1) == soft.label(item2, v2));
  CHECK(soft.table_checksum() != 0);
  CHECK(soft.table_checksum() == LabelProvider(data::LabelingMode::soft, set, &f.teacher).table_checksum());

  CHECK_THROWS_AS(LabelProvider(data::LabelingMode::multi_sl, set, nullptr), ConfigError);
  CHECK_THROWS_AS(LabelProvider(data::LabelingMode::soft, set, nullptr), ConfigError);
  // Stored soft labels need no teacher.
  auto stored = set;
  for (auto& it : stored.data.items) it.soft_label = std::vector<double>{0.1, 0.2, 0.3, 0.4};
  const LabelProvider from_set(data::LabelingMode::soft, stored, nullptr);
  const auto l = from_set.label(0, clip);
  CHECK(l[3] - l[0] == doctest::Approx(std::log(4.0)).epsilon(1e-5));

  CHECK_THROWS_AS(evaluate(set, testing::small_spec(), quick(data::LabelingMode::multi_sl, 1), f.val, nullptr),
                  ConfigError);
}

TEST_CASE("soft labels stay bit-stable across epochs") {
  const auto& f = fixture();
  const auto rep = evaluate(f.condensed, testing::small_spec(), quick(data::LabelingMode::soft, 6), f.val, &f.teacher);
  REQUIRE(rep.label_checksums.size() == 12);
  for (auto c : rep.label_checksums) CHECK(c == rep.label_checksums.front());
  CHECK(rep.label_checksums.front() != 0);
}

TEST_CASE("untrained evaluation sits at chance") {
  const auto& f = fixture();
  auto cfg = quick(data::LabelingMode::hard, 0);
  cfg.seeds = {0, 1, 2, 3, 4};
  const auto rep = evaluate(f.condensed, testing::small_spec(), cfg, f.val, nullptr);
  CHECK(rep.iterations == 0);
  const auto n = static_cast<double>(f.val.items.size());
  const boost::math::binomial chance(n, 0.25);
  const double lo = boost::math::quantile(chance, 0.005) / n;
  const double hi = boost::math::quantile(boost::math::complement(chance, 0.005)) / n;
  for (double a : rep.top1) {
    CHECK(a >= lo);
    CHECK(a <= hi);
  }
}

TEST_CASE("training on the full dataset nearly solves the validation set") {
  const auto& f = fixture();
  const auto full = full_dataset_set(f.train, 8);
  CHECK(full.ipc == 10);
  CHECK(full.provenance.method == "full");
  EvalConfig cfg = quick(data::LabelingMode::hard, 30);
  cfg.base_batch = 1;
  cfg.seeds = {0};
  const auto rep = evaluate(full, testing::small_spec(), cfg, f.val, nullptr);
  MESSAGE("full-data accuracy " << rep.mean);
  CHECK(rep.mean >= 0.9);
  CHECK(rep.metric == "top1");
  CHECK(rep.batch_size == 10);
  CHECK(rep.iterations == 30 * 4);
}

TEST_CASE("evaluation is deterministic per seed and cross-architecture reports share provenance") {
  const auto& f = fixture();
  const auto cfg = quick(data::LabelingMode::multi_sl, 4);
  const auto spec = testing::small_spec();
  const auto a = evaluate(f.condensed, spec, cfg, f.val, &f.teacher);
  const auto b = evaluate(f.condensed, spec, cfg, f.val, &f.teacher);
  CHECK(a.top1 == b.top1);
  CHECK(a.seeds == cfg.seeds);
  CHECK(a.mean == doctest::Approx((a.top1[0] + a.top1[1]) / 2));

  auto one = cfg;
  one.seeds = {1};
  CHECK(evaluate(f.condensed, spec, one, f.val, &f.teacher).top1[0] == a.top1[1]);

  const auto reps = cross_arch_evaluate(f.condensed, {spec, testing::small_spec(nn::Arch::factorized_st)}, cfg,
                                        f.val, &f.teacher);
  REQUIRE(reps.size() == 2);
  CHECK(reps[0].arch != reps[1].arch);
  CHECK(reps[0].top1 == a.top1);
  for (const auto& r : reps) {
    CHECK(r.provenance.method == f.condensed.provenance.method);
    CHECK(r.provenance.config_hash == f.condensed.provenance.config_hash);
    CHECK(r.config_fingerprint == a.config_fingerprint);
  }
  const auto twice = cross_arch_evaluate(f.condensed, {spec, spec}, cfg, f.val, &f.teacher);
  CHECK(twice[0].top1 == twice[1].top1);

  const auto js = to_json(a);
  CHECK(js.find("\"method\"") != std::string::npos);
  CHECK(js.find("\"mean\"") != std::string::npos);
}

TEST_CASE("cutmix training runs for every labeling mode") {
  const auto& f = fixture();
  for (const auto mode : {data::LabelingMode::hard, data::LabelingMode::soft, data::LabelingMode::multi_sl}) {
    auto cfg = quick(mode, 2);
    cfg.cutmix = true;
    cfg.base_batch = 2;
    const auto rep = evaluate(f.condensed, testing::small_spec(), cfg, f.val, &f.teacher);
    for (double v : rep.top1) CHECK(std::isfinite(v));
  }
}

TEST_CASE("a diverging student raises an error naming seed and epoch") {
  const auto& f = fixture();
  auto cfg = quick(data::LabelingMode::soft, 20);
  cfg.lr = 1e30;
  cfg.seeds = {7};
  try {
    evaluate(f.condensed, testing::small_spec(), cfg, f.val, &f.teacher);
    FAIL("expected EvalError");
  } catch (const EvalError& e) {
    CHECK(e.seed() == 7);
    CHECK(e.epoch() >= 0);
    CHECK(std::string(e.what()).find("seed 7") != std::string::npos);
  }
  CHECK_THROWS_AS(evaluate(f.condensed, testing::small_spec(nn::Arch::mini_c3d, 0.25, 5), quick(data::LabelingMode::hard, 1),
                           f.val, nullptr),
                  CompatibilityError);
}
