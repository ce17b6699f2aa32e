#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "support.hpp"
#include "vdc/distill_dm.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/select.hpp"

using namespace vdc;
using namespace vdc::dm;

namespace {

struct Fixture {
  data::Dataset train;
  std::vector<nn::TrainedModel> models;  // mini_c3d, factorized_st
  data::CondensedSet init;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    data::MicroSpec ms;
    ms.per_class = 8;
    ms.seed = 31;
    x.train = data::generate_micro_dataset(ms);
    nn::ExpertConfig ec;
    ec.epochs = 3;
    ec.lr = 0.05;
    for (auto arch : {nn::Arch::mini_c3d, nn::Arch::factorized_st}) {
      const auto net = nn::Network::build(testing::small_spec(arch, 0.25));
      x.models.push_back(nn::train_expert(net, x.train, ec, 1).final_model(nn::to_string(arch)));
    }
    x.init = select::select_random(x.train, 1, 8, 5);
    return x;
  }();
  return f;
}

template <class R>
DmNet<R> dm_net(const nn::Network& net, const nn::TrainedModel& m) {
  return DmNet<R>{&net, std::vector<R>(m.params.begin(), m.params.end()), m.buffers};
}

std::vector<Tensor<double>> random_clips(std::size_t n, Rng& rng) {
  std::vector<Tensor<double>> clips;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<double> c({8, 3, 16, 16});
    for (auto& v : c.data) v = rng.uniform();
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace

TEST_CASE("statistic term matches hand arithmetic on two clips and two channels") {
  // clip 0: channel 0 = 1 2 3, channel 1 = 0 0 4; clip 1: 5 6 7 and 2 2 2.
  Tensor<double> act({2, 2, 3}, {1, 2, 3, 0, 0, 4, 5, 6, 7, 2, 2, 2});
  const std::vector<int> rows = {0, 1};
  const std::vector<double> mean_t = {3, 2}, var_t = {4, 1};
  // mu = (4, 5/3), var = (14/3, 17/9); |dmu| = sqrt(10)/3, |dvar| = 10/9.
  const double expect = 0.7 * (std::sqrt(10.0) / 3.0 + 10.0 / 9.0);
  Tensor<double> tap(act.shape);
  const double got = detail::stat_term<double>(act, rows, mean_t, var_t, 0.7, &tap);
  CHECK(std::abs(got - expect) < 1e-10);

  // The tap is the gradient of the term with respect to the activations.
  for (std::size_t i = 0; i < act.size(); ++i) {
    const double keep = act.data[i];
    act.data[i] = keep + 1e-6;
    const double fp = detail::stat_term<double>(act, rows, mean_t, var_t, 0.7, nullptr);
    act.data[i] = keep - 1e-6;
    const double fm = detail::stat_term<double>(act, rows, mean_t, var_t, 0.7, nullptr);
    act.data[i] = keep;
    CHECK(testing::rel_err((fp - fm) / 2e-6, tap.data[i], 1e-8) < 1e-6);
  }
  const std::vector<double> wrong = {1, 2, 3};
  CHECK_THROWS_AS(detail::stat_term<double>(act, rows, wrong, wrong, 1.0, nullptr), CompatibilityError);
}

TEST_CASE("streaming moments equal a two-pass computation") {
  Rng rng(2);
  std::vector<Tensor<float>> chunks;
  ChannelMoments cm(3);
  for (int k = 0; k < 7; ++k) {
    const std::size_t B = static_cast<std::size_t>(rng.uniform_int(1, 5));
    Tensor<float> t({B, 3, 4});
    for (auto& v : t.data) v = static_cast<float>(rng.normal(3.0, 2.0));
    cm.add(t);
    chunks.push_back(std::move(t));
  }
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> xs;
    for (const auto& t : chunks) {
      for (std::size_t b = 0; b < t.dim(0); ++b) {
        for (std::size_t i = 0; i < 4; ++i) xs.push_back(t.data[(b * 3 + c) * 4 + i]);
      }
    }
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    CHECK(cm.count() == n);
    CHECK(std::abs(cm.mean()[c] - mean) <= 1e-10 * std::abs(mean));
    CHECK(std::abs(cm.variance()[c] - ss / n) <= 1e-10 * (ss / n));
  }
}

TEST_CASE("zero network input through the first convolution gives the bias with zero variance") {
  const auto& fx = fixture();
  const auto& model = fx.models[0];
  const auto net = nn::Network::build(model.spec);
  // Frames at the per-channel normalization mean reach the first layer as zeros.
  data::Dataset zeros;
  zeros.num_classes = 4;
  for (int i = 0; i < 4; ++i) {
    Tensor<float> f({8, 3, 16, 16});
    for (std::size_t k = 0; k < f.size(); ++k) f.data[k] = model.spec.mean_of(static_cast<int>((k / 256) % 3));
    zeros.items.push_back({"z" + std::to_string(i), std::move(f), i, {}});
  }
  CollectOptions opt;
  opt.layers = {0};
  opt.clips_per_video = 1;
  const auto targets = collect_stat_targets(zeros, {model}, opt);
  REQUIRE(targets.size() == 1);
  const auto bias = std::find_if(net.blocks().begin(), net.blocks().end(),
                                 [](const nn::ParamBlock& b) { return b.name == "block1.conv.bias"; });
  REQUIRE(bias != net.blocks().end());
  for (std::size_t c = 0; c < targets[0].mean.size(); ++c) {
    CHECK(targets[0].mean[c] == doctest::Approx(model.params[bias->offset + c]).epsilon(1e-6));
    CHECK(targets[0].var[c] == doctest::Approx(0.0));
  }
}

TEST_CASE("targets cover every matched layer and class") {
  const auto& fx = fixture();
  CollectOptions opt;
  const auto targets = collect_stat_targets(fx.train, {fx.models[0]}, opt);
  const auto net = nn::Network::build(fx.models[0].spec);
  CHECK(targets.size() == net.stat_layers().size());
  for (const auto& t : targets) {
    const std::size_t C = net.output_shape(t.layer).at(0);
    CHECK(t.mean.size() == C);
    CHECK(t.class_mean.size() == 4);
    CHECK(t.class_var.size() == 4);
    for (const auto& v : t.class_var) {
      for (double x : v) CHECK(x >= 0);
    }
  }
  auto missing = fx.train;
  std::erase_if(missing.items, [](const data::VideoItem& it) { return it.hard_label == 2; });
  CHECK_THROWS_AS(collect_stat_targets(missing, {fx.models[0]}, opt), StatsError);
  opt.per_class = false;
  CHECK_NOTHROW(collect_stat_targets(missing, {fx.models[0]}, opt));
}

TEST_CASE("target collection does not depend on dataset order") {
  const auto& fx = fixture();
  CollectOptions opt;
  const auto a = collect_stat_targets(fx.train, {fx.models[0]}, opt);
  auto shuffled = fx.train;
  Rng rng(4);
  rng.shuffle(shuffled.items);
  const auto b = collect_stat_targets(shuffled, {fx.models[0]}, opt);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t c = 0; c < a[t].mean.size(); ++c) {
      CHECK(std::abs(a[t].mean[c] - b[t].mean[c]) <= 1e-8 * (1e-12 + std::abs(a[t].mean[c])));
      CHECK(std::abs(a[t].var[c] - b[t].var[c]) <= 1e-8 * (1e-12 + std::abs(a[t].var[c])));
      CHECK(std::abs(a[t].class_var[1][c] - b[t].class_var[1][c]) <= 1e-8 * (1e-12 + std::abs(a[t].class_var[1][c])));
    }
  }
}

TEST_CASE("matching loss gradient agrees with finite differences") {
  const auto& fx = fixture();
  const auto targets = collect_stat_targets(fx.train, {fx.models[0]}, CollectOptions{});
  const auto net = nn::Network::build(fx.models[0].spec);
  const std::vector<DmNet<double>> nets = {dm_net<double>(net, fx.models[0])};
  Rng rng(5);
  auto clips = random_clips(4, rng);
  const std::vector<int> labels = {0, 1, 1, 3};
  for (bool cw : {true, false}) {
    DmConfig cfg;
    cfg.category_wise = cw;
    const auto res = dm_loss<double>(nets, targets, clips, labels, cfg);
    double worst = 0;
    for (int s = 0; s < 12; ++s) {
      const auto b = static_cast<std::size_t>(rng.uniform_int(0, 3));
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(clips[b].size()) - 1));
      const double keep = clips[b].data[i];
      double best = 1e300;
      for (double h : {1e-5, 1e-6}) {
        clips[b].data[i] = keep + h;
        const double fp = dm_loss<double>(nets, targets, clips, labels, cfg, false).loss;
        clips[b].data[i] = keep - h;
        const double fm = dm_loss<double>(nets, targets, clips, labels, cfg, false).loss;
        clips[b].data[i] = keep;
        best = std::min(best, testing::rel_err((fp - fm) / (2 * h), res.d_clips[b].data[i], 1e-9));
      }
      worst = std::max(worst, best);
    }
    CAPTURE(cw);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("statistic term vanishes on matched statistics and is linear in its weight") {
  const auto& fx = fixture();
  const auto net = nn::Network::build(fx.models[0].spec);
  const std::vector<DmNet<double>> nets = {dm_net<double>(net, fx.models[0])};
  Rng rng(6);
  const auto clips = random_clips(3, rng);
  const std::vector<int> labels = {0, 1, 2};

  // Targets taken from the synthetic batch itself.
  const auto trace = nn::forward<double>(net, nets[0].theta, nets[0].buffers, nn::stack_clips<double>(clips),
                                         nn::NormMode::running);
  StatTargets own;
  for (int layer : net.stat_layers()) {
    const auto& act = trace.output(layer);
    const std::size_t B = act.dim(0), C = act.dim(1), P = act.size() / (B * C);
    StatTarget t;
    t.layer = layer;
    t.mean.assign(C, 0.0);
    t.var.assign(C, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < P; ++i) t.mean[c] += act.data[(b * C + c) * P + i];
      }
    }
    for (auto& m : t.mean) m /= static_cast<double>(B * P);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < P; ++i) {
          const double d = act.data[(b * C + c) * P + i] - t.mean[c];
          t.var[c] += d * d;
        }
      }
    }
    for (auto& v : t.var) v /= static_cast<double>(B * P);
    own.push_back(std::move(t));
  }
  DmConfig cfg;
  cfg.category_wise = false;
  const auto matched = dm_loss<double>(nets, own, clips, labels, cfg);
  CHECK(matched.stat == 0.0);
  CHECK(matched.cls > 0);

  const auto targets = collect_stat_targets(fx.train, {fx.models[0]}, CollectOptions{});
  cfg.cls_weight = 0;
  cfg.stat_weight = 1;
  const double one = dm_loss<double>(nets, targets, clips, labels, cfg, false).stat;
  cfg.stat_weight = 2;
  const auto two = dm_loss<double>(nets, targets, clips, labels, cfg, false);
  CHECK(two.stat == 2 * one);
  CHECK(two.cls == 0.0);
  CHECK(two.loss == two.stat);
}

TEST_CASE("category-wise matching collapses to global matching on one class") {
  const auto& fx = fixture();
  const auto net = nn::Network::build(fx.models[0].spec);
  const std::vector<DmNet<double>> nets = {dm_net<double>(net, fx.models[0])};
  auto targets = collect_stat_targets(fx.train, {fx.models[0]}, CollectOptions{});
  for (auto& t : targets) {
    t.class_mean[0] = t.mean;
    t.class_var[0] = t.var;
    t.class_within_var[0] = t.within_var;
  }
  Rng rng(7);
  const auto clips = random_clips(3, rng);
  const std::vector<int> labels = {0, 0, 0};
  DmConfig cfg;
  cfg.category_wise = true;
  const auto a = dm_loss<double>(nets, targets, clips, labels, cfg);
  cfg.category_wise = false;
  const auto b = dm_loss<double>(nets, targets, clips, labels, cfg);
  CHECK(std::abs(a.loss - b.loss) <= 1e-10 * std::abs(b.loss));
  for (std::size_t i = 0; i < a.d_clips[1].size(); ++i) {
    CHECK(std::abs(a.d_clips[1].data[i] - b.d_clips[1].data[i]) <= 1e-10 * (1e-8 + std::abs(b.d_clips[1].data[i])));
  }
}

TEST_CASE("batch variance target interpolates from within-clip to total variance") {
  const std::vector<double> total = {4.0, 1.0, 2.5}, within = {1.0, 1.0, 0.5};
  CHECK(batch_variance_target(total, within, 1) == within);
  const auto two = batch_variance_target(total, within, 2);
  CHECK(two[0] == doctest::Approx(2.5));
  CHECK(two[2] == doctest::Approx(1.5));
  const auto many = batch_variance_target(total, within, 1000000);
  for (std::size_t c = 0; c < total.size(); ++c) CHECK(many[c] == doctest::Approx(total[c]).epsilon(1e-5));
  CHECK(batch_variance_target(total, {}, 1) == total);
  CHECK_THROWS_AS(batch_variance_target(total, std::vector<double>{1.0}, 1), CompatibilityError);
  CHECK_THROWS_AS(batch_variance_target(total, within, 0), DomainError);
}

TEST_CASE("within-clip variance agrees with per-clip moments") {
  const auto& fx = fixture();
  CollectOptions opt;
  opt.clips_per_video = 1;
  const auto targets = collect_stat_targets(fx.train, {fx.models[0]}, opt);
  const auto net = nn::Network::build(fx.models[0].spec);
  for (const auto& t : targets) {
    REQUIRE(t.within_var.size() == t.var.size());
    REQUIRE(t.class_within_var.size() == t.class_var.size());
    // Pooled variance is never below the mean within-clip variance.
    for (std::size_t c = 0; c < t.var.size(); ++c) CHECK(t.within_var[c] <= t.var[c] * (1 + 1e-9) + 1e-12);
    for (std::size_t k = 0; k < t.class_var.size(); ++k) {
      for (std::size_t c = 0; c < t.var.size(); ++c) {
        CHECK(t.class_within_var[k][c] <= t.class_var[k][c] * (1 + 1e-9) + 1e-12);
      }
    }
  }
  // With correction off the loss uses the pooled variance only.
  auto stripped = targets;
  for (auto& t : stripped) {
    t.within_var.clear();
    t.class_within_var.clear();
  }
  Rng rng(5);
  const auto clips = random_clips(2, rng);
  const std::vector<int> labels = {0, 1};
  const std::vector<DmNet<double>> nets = {dm_net<double>(net, fx.models[0])};
  DmConfig cfg;
  cfg.var_correction = false;
  const double off = dm_loss<double>(nets, targets, clips, labels, cfg, false).loss;
  CHECK(dm_loss<double>(nets, stripped, clips, labels, cfg, false).loss == off);
  cfg.var_correction = true;
  CHECK(dm_loss<double>(nets, stripped, clips, labels, cfg, false).loss == off);
  CHECK(dm_loss<double>(nets, targets, clips, labels, cfg, false).loss != off);
}

TEST_CASE("multi-network loss is the sum of single-network losses") {
  const auto& fx = fixture();
  const auto n0 = nn::Network::build(fx.models[0].spec);
  const auto n1 = nn::Network::build(fx.models[1].spec);
  const auto both = collect_stat_targets(fx.train, fx.models, CollectOptions{});
  const auto t0 = collect_stat_targets(fx.train, {fx.models[0]}, CollectOptions{});
  auto t1 = collect_stat_targets(fx.train, {fx.models[1]}, CollectOptions{});
  CHECK(both.size() == t0.size() + t1.size());
  Rng rng(8);
  const auto clips = random_clips(4, rng);
  const std::vector<int> labels = {0, 1, 2, 3};
  DmConfig cfg;
  const auto ab = dm_loss<double>({dm_net<double>(n0, fx.models[0]), dm_net<double>(n1, fx.models[1])}, both, clips,
                                  labels, cfg);
  const auto a = dm_loss<double>({dm_net<double>(n0, fx.models[0])}, t0, clips, labels, cfg);
  const auto b = dm_loss<double>({dm_net<double>(n1, fx.models[1])}, t1, clips, labels, cfg);
  CHECK(ab.loss == doctest::Approx(a.loss + b.loss).epsilon(1e-12));
  CHECK(ab.stat == doctest::Approx(a.stat + b.stat).epsilon(1e-12));
  for (std::size_t i = 0; i < ab.d_clips[2].size(); i += 97) {
    const double s = a.d_clips[2].data[i] + b.d_clips[2].data[i];
    CHECK(std::abs(ab.d_clips[2].data[i] - s) <= 1e-12 * (1e-6 + std::abs(s)));
  }
}

TEST_CASE("EDC runs: no-op, descent, two networks") {
  const auto& fx = fixture();
  const auto targets = collect_stat_targets(fx.train, {fx.models[0]}, CollectOptions{});
  DmConfig cfg;
  cfg.iterations = 0;
  const auto noop = run_edc({fx.models[0]}, targets, cfg, fx.init, 1);
  for (std::size_t i = 0; i < noop.data.items.size(); ++i) {
    CHECK(noop.data.items[i].frames.data == fx.init.data.items[i].frames.data);
    CHECK(noop.data.items[i].soft_label.has_value());
  }

  cfg.iterations = 60;
  EdcLog log;
  const auto out = run_edc({fx.models[0]}, targets, cfg, fx.init, 1, &log);
  REQUIRE(log.stat_terms.size() == 60);
  // Moving average of the statistic term over a 10-iteration window.
  std::vector<double> ma;
  for (std::size_t i = 10; i <= 50; i += 10) {
    ma.push_back(std::accumulate(log.stat_terms.begin() + static_cast<std::ptrdiff_t>(i - 10),
                                 log.stat_terms.begin() + static_cast<std::ptrdiff_t>(i), 0.0) / 10.0);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) {
    CAPTURE(i);
    CHECK(ma[i] < ma[i - 1]);
  }
  CHECK(out.provenance.method == "edc");
  const auto again = run_edc({fx.models[0]}, targets, cfg, fx.init, 1);
  CHECK(data::dataset_hash(again.data) == data::dataset_hash(out.data));

  cfg.iterations = 3;
  cfg.category_wise = false;
  const auto both = collect_stat_targets(fx.train, fx.models, CollectOptions{});
  const auto two = run_edc(fx.models, both, cfg, fx.init, 2);
  CHECK(two.provenance.method == "edc_nocw");
  CHECK(two.provenance.networks == std::vector<std::string>{"mini_c3d", "factorized_st"});
}

TEST_CASE("statistics cache round trip and corruption") {
  const auto& fx = fixture();
  testing::TempDir dir("dmcache");
  CollectOptions opt;
  const auto a = cached_stat_targets(fx.train, {fx.models[0]}, opt, dir.path());
  const auto b = cached_stat_targets(fx.train, {fx.models[0]}, opt, dir.path());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mean == b[i].mean);
    CHECK(a[i].class_var == b[i].class_var);
    CHECK(a[i].network_id == b[i].network_id);
  }
  std::filesystem::path file;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
    if (e.path().extension() == ".json") file = e.path();
  }
  REQUIRE(!file.empty());
  std::ofstream(file, std::ios::trunc) << "{ not json";
  CHECK_THROWS_AS(cached_stat_targets(fx.train, {fx.models[0]}, opt, dir.path()), CacheError);
}
