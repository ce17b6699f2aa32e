#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "vdc/dataio.hpp"
#include "vdc/nn/model.hpp"
#include "vdc/rng.hpp"

namespace testing {

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

// Upper-tail p-value of Pearson's statistic against uniform expectations.
inline double chi2_uniform_p(const std::vector<long>& counts) {
  double total = 0;
  for (long c : counts) total += static_cast<double>(c);
  const double expect = total / static_cast<double>(counts.size());
  double stat = 0;
  for (long c : counts) stat += (c - expect) * (c - expect) / expect;
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("vdc_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Uniform-noise videos, per_class items for each class, interleaved.
inline vdc::data::Dataset noise_dataset(int classes, int per_class, int frames, std::uint64_t seed, int C = 3,
                                        int H = 16, int W = 16) {
  vdc::data::Dataset ds;
  ds.num_classes = classes;
  vdc::Rng rng(seed);
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < classes; ++c) {
      vdc::data::VideoItem item;
      item.id = "n" + std::to_string(c) + "_" + std::to_string(i);
      item.hard_label = c;
      item.frames = vdc::Tensor<float>({static_cast<std::size_t>(frames), static_cast<std::size_t>(C),
                                        static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
      for (auto& v : item.frames.data) v = static_cast<float>(rng.uniform());
      ds.items.push_back(std::move(item));
    }
  }
  return ds;
}

inline vdc::nn::ModelSpec small_spec(vdc::nn::Arch arch = vdc::nn::Arch::mini_c3d, double width = 0.25,
                                     int classes = 4) {
  vdc::nn::ModelSpec s;
  s.arch = arch;
  s.width_mult = width;
  s.num_classes = classes;
  return s;
}

}  // namespace testing
