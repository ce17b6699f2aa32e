#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "vdc/nn/forward.hpp"
#include "vdc/nn/inference.hpp"
#include "vdc/nn/loss.hpp"
#include "vdc/nn/trajectory.hpp"

using namespace vdc;
using namespace vdc::nn;

namespace {

std::size_t analytic_params(const Network& net) {
  const auto& s = net.spec();
  std::size_t n = 0;
  int in = s.channels;
  for (int w : net.block_widths()) {
    const auto ci = static_cast<std::size_t>(in), co = static_cast<std::size_t>(w);
    if (s.arch == Arch::mini_c3d) {
      n += 27 * ci * co + co;
    } else {
      n += 9 * ci * co + co + 3 * co * co + co;
    }
    n += 2 * co;
    in = w;
  }
  return n + static_cast<std::size_t>(in * s.num_classes + s.num_classes);
}

struct FdResult {
  double worst = 0;
  int checked = 0;
};

// Central differences on coordinates whose analytic gradient is not
// negligible against the global gradient scale. ReLU and max-pool kinks can
// fall inside a step, so each coordinate takes the best of a few step sizes.
// A block whose gradient is identically zero (conv bias feeding batch-mode
// normalization) must also have a numerically zero FD gradient.
template <class F>
FdResult fd_check(const F& f, std::vector<double>& x, const std::vector<double>& grad, std::size_t begin,
                  std::size_t end, int samples, Rng& rng, double scale) {
  auto fd_at = [&](std::size_t i, double h) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    return (fp - fm) / (2 * h);
  };
  std::vector<std::size_t> pool;
  for (std::size_t i = begin; i < end; ++i) {
    if (std::abs(grad[i]) >= 1e-3 * scale) pool.push_back(i);
  }
  FdResult r;
  if (pool.empty()) {
    for (int s = 0; s < samples; ++s) {
      const auto i = begin + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(end - begin) - 1));
      r.worst = std::max(r.worst, std::abs(fd_at(i, 1e-5) - grad[i]) / scale);
      ++r.checked;
    }
    return r;
  }
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    double best = 1e300;
    for (double h : {1e-5, 1e-6, 1e-7}) best = std::min(best, testing::rel_err(fd_at(i, h), grad[i], 1e-10));
    r.worst = std::max(r.worst, best);
    ++r.checked;
  }
  return r;
}

Tensor<double> random_input(const ModelSpec& s, std::size_t batch, Rng& rng) {
  Tensor<double> x({batch, static_cast<std::size_t>(s.channels), static_cast<std::size_t>(s.input_length),
                    static_cast<std::size_t>(s.height), static_cast<std::size_t>(s.width)});
  for (auto& v : x.data) v = rng.uniform();
  return x;
}

data::Dataset micro(int per_class = 10, std::uint64_t seed = 1) {
  data::MicroSpec ms;
  ms.per_class = per_class;
  ms.seed = seed;
  return data::generate_micro_dataset(ms);
}

}  // namespace

TEST_CASE("network shapes and parameter counts") {
  for (auto arch : {Arch::mini_c3d, Arch::factorized_st}) {
    for (double w : {0.25, 0.5, 1.0}) {
      const auto spec = testing::small_spec(arch, w);
      const Network net = Network::build(spec);
      CHECK(net.param_count() == analytic_params(net));
      const auto theta = net.init_params(1);
      CHECK(theta.size() == net.param_count());
      Rng rng(2);
      const auto x = random_input(spec, 3, rng);
      const std::vector<double> th(theta.begin(), theta.end());
      const auto tr = forward<double>(net, th, {}, x, NormMode::batch);
      CHECK(tr.logits().shape == Shape{3, 4});
    }
  }
  const auto a = Network::build(testing::small_spec(Arch::mini_c3d, 1.0));
  const auto b = Network::build(testing::small_spec(Arch::factorized_st, 1.0));
  CHECK(a.block_widths() == std::vector<int>{16, 32, 64, 64});
  CHECK(a.param_count() != b.param_count());
  CHECK(Network::build(testing::small_spec(Arch::mini_c3d, 0.5)).param_count() < 100000);

  auto bad = testing::small_spec();
  bad.height = 24;
  CHECK_THROWS_AS(Network::build(bad), ConfigError);
  bad = testing::small_spec();
  bad.input_length = 4;
  CHECK_THROWS_AS(Network::build(bad), ConfigError);
}

TEST_CASE("initialization is deterministic and flatten is a bijection") {
  const Network net = Network::build(testing::small_spec(Arch::factorized_st, 0.5));
  CHECK(net.init_params(7) == net.init_params(7));
  CHECK(net.init_params(7) != net.init_params(8));
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    ParamVector theta(net.param_count());
    for (auto& v : theta) v = static_cast<float>(rng.normal());
    const auto named = net.unflatten(theta);
    CHECK(named.size() == net.blocks().size());
    CHECK(net.flatten(named) == theta);
  }
}

TEST_CASE("forward and backward agree with finite differences") {
  for (auto arch : {Arch::mini_c3d, Arch::factorized_st}) {
    for (auto mode : {NormMode::batch, NormMode::running}) {
      const auto spec = testing::small_spec(arch, 0.25);
      const Network net = Network::build(spec);
      const auto th32 = net.init_params(5);
      std::vector<double> theta(th32.begin(), th32.end());
      Rng rng(9);
      std::vector<float> buffers = net.init_buffers();
      for (std::size_t i = 0; i < buffers.size(); ++i) {
        buffers[i] = static_cast<float>(rng.uniform(0.2, 0.8));
      }
      auto x = random_input(spec, 3, rng);
      const std::vector<int> labels = {0, 3, 1};
      auto loss = [&]() {
        const auto tr = forward<double>(net, theta, buffers, x, mode);
        return cross_entropy<double>(tr.logits(), labels, nullptr);
      };
      const auto tr = forward<double>(net, theta, buffers, x, mode);
      Tensor<double> gz;
      cross_entropy<double>(tr.logits(), labels, &gz);
      std::vector<double> gtheta(theta.size(), 0.0);
      const auto gx = backward<double>(net, theta, tr, mode, &gz, gtheta, nullptr, true);

      std::vector<double> xv = x.data;
      auto loss_x = [&]() {
        Tensor<double> xx(x.shape, xv);
        const auto t = forward<double>(net, theta, buffers, xx, mode);
        return cross_entropy<double>(t.logits(), labels, nullptr);
      };
      double xscale = 0, pscale = 0;
      for (double v : gx.data) xscale = std::max(xscale, std::abs(v));
      for (double v : gtheta) pscale = std::max(pscale, std::abs(v));
      const auto rin = fd_check(loss_x, xv, gx.data, 0, xv.size(), 25, rng, xscale);
      CAPTURE(to_string(arch));
      CHECK(rin.checked == 25);
      CHECK(rin.worst < 1e-4);

      // Every parameter block: conv, batchnorm and linear parameters.
      for (const auto& block : net.blocks()) {
        const auto r = fd_check(loss, theta, gtheta, block.offset, block.offset + block.size(), 20, rng, pscale);
        CAPTURE(block.name);
        CHECK(r.checked == 20);
        CHECK(r.worst < 1e-4);
      }
    }
  }
}

TEST_CASE("expert training records epochs + 1 snapshots and learns") {
  const auto ds = micro();
  const Network net = Network::build(testing::small_spec(Arch::mini_c3d, 0.25));
  ExpertConfig ec;
  ec.epochs = 10;
  ec.lr = 0.05;
  ec.momentum = 0.9;
  const auto t = train_expert(net, ds, ec, 3);
  CHECK(t.snapshots.size() == 11);
  CHECK(t.epoch_accuracy.size() == 10);
  CHECK(t.epoch_accuracy.back() > t.epoch_accuracy.front());
  for (const auto& s : t.snapshots) CHECK(s.size() == net.param_count());
  CHECK(t.running_stats.size() == net.buffer_count());

  const auto again = train_expert(net, ds, ec, 3);
  CHECK(again.snapshots == t.snapshots);
  CHECK(again.running_stats == t.running_stats);

  const auto other = train_expert(net, ds, ec, 4);
  double dist = 0;
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    dist += std::pow(double(other.snapshots.back()[i]) - t.snapshots.back()[i], 2);
  }
  CHECK(dist > 0);

  SUBCASE("save/load round trip and errors") {
    testing::TempDir dir("traj");
    const auto path = dir / "expert_00.vdct";
    save_trajectory(t, path);
    const auto back = load_trajectory(path);
    CHECK(back.snapshots == t.snapshots);
    CHECK(back.running_stats == t.running_stats);
    CHECK(back.epochs == t.epochs);
    CHECK(back.seed == t.seed);
    CHECK(back.spec_hash == t.spec_hash);
    CHECK(back.epoch_accuracy == t.epoch_accuracy);
    CHECK(spec_hash(back.spec) == spec_hash(net.spec()));
    CHECK_NOTHROW(load_trajectory(path, net.spec()));
    CHECK_THROWS_AS(load_trajectory(path, testing::small_spec(Arch::factorized_st, 0.25)), CompatibilityError);
    CHECK(list_trajectories(dir.path()) == std::vector<std::filesystem::path>{path});

    const auto cut = dir / "cut.vdct";
    std::filesystem::copy_file(path, cut);
    std::filesystem::resize_file(cut, std::filesystem::file_size(path) - 9);
    CHECK_THROWS_AS(load_trajectory(cut), FormatError);
    std::ofstream(dir / "junk.vdct") << "not a trajectory\n";
    CHECK_THROWS_AS(load_trajectory(dir / "junk.vdct"), FormatError);
  }
}

TEST_CASE("diverging training reports the epoch") {
  const auto ds = micro(4);
  const Network net = Network::build(testing::small_spec(Arch::mini_c3d, 0.25));
  ExpertConfig ec;
  ec.epochs = 5;
  ec.lr = 1e30;
  try {
    train_expert(net, ds, ec, 1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("model specs parse and describe") {
  ModelSpec base = testing::small_spec();
  const auto s = parse_model_spec("factorized_st:0.5", base);
  CHECK(s.arch == Arch::factorized_st);
  CHECK(s.width_mult == 0.5);
  CHECK(spec_hash(spec_from_description(describe(s))) == spec_hash(s));
  CHECK_THROWS(parse_arch("resnet"));
}

TEST_CASE("top-k accuracy breaks ties toward the lower class") {
  Tensor<float> z({3, 4}, {1, 1, 0, 0,  0, 2, 2, 0,  0, 0, 0, 5});
  const std::vector<int> labels = {1, 1, 3};
  // Row 0: class 0 ties with class 1 and ranks first, so label 1 misses top-1.
  CHECK(topk_accuracy(z, labels, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(topk_accuracy(z, labels, 2) == doctest::Approx(1.0));
}
