#include <doctest.h>

#include <map>
#include <set>

#include "support.hpp"
#include "vdc/nn/inference.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/select.hpp"

using namespace vdc;
using namespace vdc::select;

namespace {

struct Fixture {
  data::Dataset train;
  nn::TrainedModel teacher;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    data::MicroSpec ms;
    ms.per_class = 10;
    ms.seed = 41;
    x.train = data::generate_micro_dataset(ms);
    const auto net = nn::Network::build(testing::small_spec(nn::Arch::mini_c3d, 0.25));
    nn::ExpertConfig ec;
    ec.epochs = 8;
    ec.lr = 0.05;
    x.teacher = nn::train_expert(net, x.train, ec, 7).final_model("teacher");
    return x;
  }();
  return f;
}

// Log-probability of the label on the center model window of a stored clip,
// computed one clip at a time.
double oracle_score(const data::VideoItem& item, temporal::Window w, int stored_length, const nn::TrainedModel& m) {
  const auto net = nn::Network::build(m.spec);
  const auto video = temporal::extend_by_duplication(item.frames, stored_length);
  const auto stored = temporal::slice_frames(video, w.start, w.length);
  const auto plan = temporal::make_plan(stored_length, m.spec.input_length);
  const std::vector<Tensor<float>> clip = {temporal::extract_clip(stored, plan, temporal::center_window(plan))};
  const auto z = nn::predict_logits(net, m, clip);
  double lse = 0;
  for (std::size_t k = 0; k < z.dim(1); ++k) lse += std::exp(static_cast<double>(z.data[k]));
  return static_cast<double>(z.data[static_cast<std::size_t>(item.hard_label)]) - std::log(lse);
}

}  // namespace

TEST_CASE("random selection: cardinality, determinism, errors") {
  const auto ds = testing::noise_dataset(4, 5, 12, 1);
  const auto a = select_random(ds, 2, 8, 3);
  CHECK(a.data.items.size() == 8);
  CHECK(a.data.class_counts() == std::vector<int>{2, 2, 2, 2});
  for (const auto& it : a.data.items) CHECK(it.num_frames() == 8);
  const auto b = select_random(ds, 2, 8, 3);
  CHECK(data::dataset_hash(a.data) == data::dataset_hash(b.data));
  CHECK(data::dataset_hash(select_random(ds, 2, 8, 4).data) != data::dataset_hash(a.data));

  // Short videos are duplication-extended before the window is cut.
  const auto shorts = testing::noise_dataset(4, 2, 3, 2);
  const auto s = select_random(shorts, 1, 8, 1);
  for (const auto& it : s.data.items) CHECK(it.num_frames() == 8);

  auto uneven = ds;
  std::erase_if(uneven.items, [](const data::VideoItem& it) { return it.hard_label == 2 && it.id != "n2_0"; });
  try {
    select_random(uneven, 2, 8, 1);
    FAIL("expected SelectionError");
  } catch (const SelectionError& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
  CHECK_THROWS_AS(select_herding(uneven, 2, 8, fixture().teacher), SelectionError);
}

TEST_CASE("random selection is uniform over videos and windows") {
  const auto ds = testing::noise_dataset(2, 5, 12, 1);
  std::map<std::string, long> picked;
  std::vector<long> starts(5, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto set = select_random(ds, 1, 8, seed);
    const auto& it = set.data.items.front();
    ++picked[it.id];
    // Identify the start by matching the first frame against the source.
    const auto& src = *std::find_if(ds.items.begin(), ds.items.end(), [&](const data::VideoItem& x) { return x.id == it.id; });
    const std::size_t frame = it.frames.size() / 8;
    for (int st = 0; st <= 4; ++st) {
      if (std::equal(it.frames.data.begin(), it.frames.data.begin() + static_cast<std::ptrdiff_t>(frame),
                     src.frames.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(st) * frame))) {
        ++starts[static_cast<std::size_t>(st)];
      }
    }
  }
  std::vector<long> counts;
  for (const auto& [id, n] : picked) {
    if (id.rfind("n0_", 0) == 0) counts.push_back(n);
  }
  REQUIRE(counts.size() == 5);
  CHECK(testing::chi2_uniform_p(counts) > 0.01);
  CHECK(testing::chi2_uniform_p(starts) > 0.01);
}

// Independent greedy: for each step, evaluate every remaining candidate's
// running mean explicitly.
std::vector<int> herding_oracle(const std::vector<std::vector<double>>& f, int count) {
  const std::size_t n = f.size(), d = f[0].size();
  std::vector<double> mu(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) mu[k] += f[i][k] / static_cast<double>(n);
  }
  std::vector<int> chosen;
  for (int step = 0; step < count; ++step) {
    int best = -1;
    double best_d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(chosen.begin(), chosen.end(), static_cast<int>(i)) != chosen.end()) continue;
      auto trial = chosen;
      trial.push_back(static_cast<int>(i));
      double dist = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double m = 0;
        for (int j : trial) m += f[static_cast<std::size_t>(j)][k];
        m /= static_cast<double>(trial.size());
        dist += (m - mu[k]) * (m - mu[k]);
      }
      if (best < 0 || dist < best_d - 1e-12) {
        best = static_cast<int>(i);
        best_d = dist;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

TEST_CASE("herding matches an exhaustive greedy oracle") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = trial < 10 ? 5 : rng.uniform_int(3, 12);
    const int d = trial < 10 ? 2 : rng.uniform_int(1, 6);
    const int count = trial < 10 ? 3 : rng.uniform_int(1, n);
    std::vector<std::vector<double>> f(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
    // Integer grid coordinates make exact ties common.
    for (auto& row : f) {
      for (auto& v : row) v = rng.uniform_int(-3, 3);
    }
    CAPTURE(trial);
    CHECK(herding_order(f, count) == herding_oracle(f, count));
  }
  // Duplicate points tie; the lower index wins.
  const std::vector<std::vector<double>> dup = {{1, 0}, {-1, 0}, {1, 0}, {-1, 0}};
  CHECK(herding_order(dup, 2) == std::vector<int>{0, 1});
  CHECK_THROWS_AS(herding_order(dup, 5), SelectionError);
}

TEST_CASE("herding picks the video nearest the class-mean feature at ipc 1") {
  const auto& fx = fixture();
  const auto set = select_herding(fx.train, 1, 8, fx.teacher);
  REQUIRE(set.data.items.size() == 4);
  const auto net = nn::Network::build(fx.teacher.spec);
  std::vector<Tensor<float>> clips;
  for (const auto& it : fx.train.items) {
    const auto plan = temporal::make_plan(it.num_frames(), 8);
    clips.push_back(temporal::extract_clip(it.frames, plan, temporal::center_window(plan)));
  }
  const auto feats = nn::predict_features(net, fx.teacher, clips);
  const std::size_t F = feats.dim(1);
  for (int c = 0; c < 4; ++c) {
    const auto members = fx.train.indices_of_class(c);
    std::vector<double> mu(F, 0.0);
    for (int m : members) {
      for (std::size_t k = 0; k < F; ++k) mu[k] += feats.data[static_cast<std::size_t>(m) * F + k] / double(members.size());
    }
    int best = -1;
    double best_d = 1e300;
    for (int m : members) {
      double d = 0;
      for (std::size_t k = 0; k < F; ++k) d += std::pow(feats.data[static_cast<std::size_t>(m) * F + k] - mu[k], 2);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    CHECK(set.data.items[static_cast<std::size_t>(c)].id == fx.train.items[static_cast<std::size_t>(best)].id);
  }
  CHECK(data::dataset_hash(select_herding(fx.train, 1, 8, fx.teacher).data) == data::dataset_hash(set.data));
}

TEST_CASE("RDED matches exhaustive scoring of every candidate clip") {
  const auto& fx = fixture();
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    // A tiny dataset: 3 videos per class, 2 candidate windows each.
    data::Dataset tiny;
    tiny.num_classes = 4;
    for (int c = 0; c < 4; ++c) {
      const auto members = fx.train.indices_of_class(c);
      for (int j = 0; j < 3; ++j) {
        const int pick = members[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(members.size()) - 1))];
        auto item = fx.train.items[static_cast<std::size_t>(pick)];
        item.id += "#" + std::to_string(j);
        tiny.items.push_back(std::move(item));
      }
    }
    const int tc = trial % 2 == 0 ? 8 : 12;
    std::vector<std::vector<temporal::Window>> cand;
    for (std::size_t i = 0; i < tiny.items.size(); ++i) {
      cand.push_back({{rng.uniform_int(0, 16 - tc), tc}, {rng.uniform_int(0, 16 - tc), tc}});
    }
    RdedConfig cfg;
    cfg.ipc = 1 + trial % 2;
    cfg.stored_length = tc;
    std::vector<ScoredClip> picked;
    const auto set = select_rded_from(tiny, cand, cfg, fx.teacher, &picked);

    // Oracle: best window per video, then the top ipc videos per class.
    std::vector<std::pair<double, std::size_t>> best(tiny.items.size());
    std::vector<int> best_w(tiny.items.size());
    for (std::size_t i = 0; i < tiny.items.size(); ++i) {
      const double s0 = oracle_score(tiny.items[i], cand[i][0], tc, fx.teacher);
      const double s1 = oracle_score(tiny.items[i], cand[i][1], tc, fx.teacher);
      best[i] = {std::max(s0, s1), i};
      best_w[i] = s1 > s0 ? 1 : 0;
    }
    std::vector<std::string> expect;
    for (int c = 0; c < 4; ++c) {
      std::vector<std::pair<double, std::size_t>> cls;
      for (const auto& b : best) {
        if (tiny.items[b.second].hard_label == c) cls.push_back(b);
      }
      std::stable_sort(cls.begin(), cls.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
      for (int k = 0; k < cfg.ipc; ++k) {
        const std::size_t i = cls[static_cast<std::size_t>(k)].second;
        expect.push_back(tiny.items[i].id + "@" + std::to_string(cand[i][static_cast<std::size_t>(best_w[i])].start));
      }
    }
    std::vector<std::string> got;
    for (const auto& p : picked) got.push_back(p.source_id + "@" + std::to_string(p.window.start));
    CAPTURE(trial);
    CHECK(got == expect);
    CHECK(set.data.items.size() == 4 * static_cast<std::size_t>(cfg.ipc));
    for (const auto& p : picked) {
      CHECK(std::abs(p.score - oracle_score(tiny.items[static_cast<std::size_t>(p.item)], p.window, tc, fx.teacher)) < 1e-5);
    }
  }
}

TEST_CASE("a dominant realism score wins its class") {
  std::vector<std::vector<ScoredClip>> scored;
  for (int v = 0; v < 6; ++v) {
    std::vector<ScoredClip> clips;
    for (int k = 0; k < 3; ++k) {
      const double s = v == 4 && k == 1 ? -0.01 : -5.0 - v - k;
      clips.push_back({v, "v" + std::to_string(v), {k, 8}, s, 0});
    }
    scored.push_back(std::move(clips));
  }
  const auto pick = rded_pick(scored, 1, 1, 1);
  REQUIRE(pick.size() == 1);
  CHECK(pick[0].source_id == "v4");
  CHECK(pick[0].window.start == 1);
  try {
    rded_pick(scored, 2, 1, 1);
    FAIL("expected SelectionError");
  } catch (const SelectionError& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
}

TEST_CASE("RDED scores do not depend on dataset order") {
  const auto& fx = fixture();
  RdedConfig cfg;
  cfg.stored_length = 8;
  cfg.seed = 3;
  auto shuffled = fx.train;
  Rng rng(9);
  rng.shuffle(shuffled.items);
  const auto a = score_candidates(fx.train, rded_candidates(fx.train, cfg), 8, fx.teacher);
  const auto b = score_candidates(shuffled, rded_candidates(shuffled, cfg), 8, fx.teacher);
  std::map<std::string, std::vector<double>> by_id;
  for (const auto& clips : a) {
    for (const auto& c : clips) by_id[c.source_id].push_back(c.score);
  }
  for (const auto& clips : b) {
    REQUIRE(clips.size() == 10);
    const auto& ref = by_id.at(clips.front().source_id);
    for (std::size_t k = 0; k < clips.size(); ++k) CHECK(std::abs(clips[k].score - ref[k]) < 1e-12);
  }
  CHECK(data::dataset_hash(select_rded(fx.train, cfg, fx.teacher).data) ==
        data::dataset_hash(select_rded(fx.train, cfg, fx.teacher).data));
}

TEST_CASE("RDED picks more realistic clips than random selection") {
  const auto& fx = fixture();
  double rded = 0, random = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RdedConfig cfg;
    cfg.stored_length = 8;
    cfg.seed = seed;
    std::vector<ScoredClip> picked;
    select_rded(fx.train, cfg, fx.teacher, &picked);
    for (const auto& p : picked) rded += p.score / 20.0;
    const auto rs = select_random(fx.train, 1, 8, seed);
    for (const auto& it : rs.data.items) random += oracle_score(it, {0, 8}, 8, fx.teacher) / 20.0;
  }
  MESSAGE("mean realism: rded " << rded << ", random " << random);
  CHECK(rded >= random);
}

TEST_CASE("factor 4 tiles four clips on a 2x2 grid") {
  std::vector<Tensor<float>> clips;
  for (int k = 0; k < 4; ++k) {
    Tensor<float> c({2, 1, 4, 4});
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] = static_cast<float>(k * 100 + static_cast<int>(i));
    clips.push_back(std::move(c));
  }
  const auto t = tile_clips(clips);
  REQUIRE(t.shape == (Shape{2, 1, 4, 4}));
  // Output pixel (y, x) in quadrant (gy, gx) averages the 2x2 source block.
  for (std::size_t f = 0; f < 2; ++f) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        const std::size_t k = (y / 2) * 2 + x / 2, yy = y % 2, xx = x % 2;
        const auto& s = clips[k].data;
        const std::size_t base = f * 16;
        const float expect = (s[base + (2 * yy) * 4 + 2 * xx] + s[base + (2 * yy) * 4 + 2 * xx + 1] +
                              s[base + (2 * yy + 1) * 4 + 2 * xx] + s[base + (2 * yy + 1) * 4 + 2 * xx + 1]) / 4.0f;
        CHECK(t.data[base + y * 4 + x] == doctest::Approx(expect));
      }
    }
  }
  CHECK(tile_clips({clips[0]}).data == clips[0].data);
  CHECK_THROWS_AS(tile_clips({clips[0], clips[1]}), SelectionError);

  const auto& fx = fixture();
  RdedConfig cfg;
  cfg.stored_length = 8;
  cfg.factor = 4;
  std::vector<ScoredClip> picked;
  const auto set = select_rded(fx.train, cfg, fx.teacher, &picked);
  REQUIRE(set.data.items.size() == 4);
  REQUIRE(picked.size() == 16);
  for (const auto& it : set.data.items) {
    CHECK(std::count(it.id.begin(), it.id.end(), '+') == 3);
    CHECK(it.frames.shape == (Shape{8, 3, 16, 16}));
  }
  cfg.factor = 16;  // 16 per class but only 10 videos
  CHECK_THROWS_AS(select_rded(fx.train, cfg, fx.teacher), SelectionError);
}
