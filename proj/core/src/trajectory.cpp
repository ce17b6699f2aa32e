#include "vdc/nn/trajectory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vdc/augment.hpp"
#include "vdc/hash.hpp"
#include "vdc/nn/forward.hpp"
#include "vdc/nn/inference.hpp"
#include "vdc/nn/loss.hpp"
#include "vdc/nn/optim.hpp"
#include "vdc/rng.hpp"

namespace vdc::nn {

namespace fs = std::filesystem;

std::string fingerprint(const ExpertConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "epochs=" << cfg.epochs << ";lr=" << cfg.lr << ";momentum=" << cfg.momentum << ";wd=" << cfg.weight_decay
     << ";batch=" << cfg.batch_size << ";hflip=" << (cfg.horizontal_flip ? 1 : 0);
  if (cfg.min_crop_area < 1) os << ";crop=" << cfg.min_crop_area;
  return os.str();
}

TrainedModel ExpertTrajectory::final_model(const std::string& id) const {
  if (snapshots.empty()) throw DomainError("trajectory has no snapshots");
  return TrainedModel{id, spec, snapshots.back(), running_stats};
}

ExpertTrajectory train_expert(const Network& net, const data::Dataset& dataset, const ExpertConfig& cfg,
                              std::uint64_t seed) {
  if (dataset.items.empty()) throw DomainError("train_expert: empty dataset");
  if (cfg.epochs < 1) throw ConfigError("train_expert: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("train_expert: batch size must be >= 1");
  if (!(cfg.min_crop_area > 0 && cfg.min_crop_area <= 1)) throw ConfigError("train_expert: min_crop_area must be in (0, 1]");
  const ModelSpec& spec = net.spec();

  ExpertTrajectory traj;
  traj.spec = spec;
  traj.spec_hash = spec_hash(spec);
  traj.epochs = cfg.epochs;
  traj.seed = seed;
  traj.config = fingerprint(cfg);

  ParamVector theta = net.init_params(seed);
  std::vector<float> buffers = net.init_buffers();
  traj.snapshots.push_back(theta);
  Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  Rng rng = Rng::derive(seed, "expert");

  const std::size_t n = dataset.items.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  std::vector<float> grad(theta.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor<float>> clips;
      std::vector<int> labels;
      for (std::size_t j = start; j < end; ++j) {
        const auto& item = dataset.items[static_cast<std::size_t>(order[j])];
        const auto video = temporal::extend_by_duplication(item.frames, spec.input_length);
        const auto plan = temporal::make_plan(static_cast<int>(video.dim(0)), spec.input_length);
        auto clip = temporal::extract_clip(video, plan, temporal::sample_window(plan, rng));
        if (cfg.min_crop_area < 1) {
          clip = aug::resized_crop(clip, aug::random_crop_box(spec.height, spec.width, cfg.min_crop_area, rng));
        }
        if (cfg.horizontal_flip && rng.bernoulli(0.5)) clip = aug::horizontal_flip(clip);
        clips.push_back(std::move(clip));
        labels.push_back(item.hard_label);
      }
      const Tensor<float> x = stack_clips<float>(clips);
      const auto trace = forward<float>(net, theta, buffers, x, NormMode::batch);
      Tensor<float> glogits;
      const float loss = cross_entropy(trace.logits(), labels, &glogits);
      if (!std::isfinite(loss)) throw TrainingError("non-finite expert training loss", epoch);
      const std::size_t K = trace.logits().dim(1);
      for (std::size_t b = 0; b < labels.size(); ++b) {
        const float* z = trace.logits().ptr() + b * K;
        if (std::max_element(z, z + K) - z == labels[b]) ++correct;
      }
      std::fill(grad.begin(), grad.end(), 0.0f);
      backward<float>(net, theta, trace, NormMode::batch, &glogits, grad, nullptr, false);
      opt.step<float>(theta, grad);
      if (!std::all_of(theta.begin(), theta.end(), [](float v) { return std::isfinite(v); })) {
        throw TrainingError("expert parameters diverged", epoch);
      }
      update_running_stats(net, trace, buffers);
    }
    traj.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
    traj.snapshots.push_back(theta);
  }
  traj.running_stats = buffers;
  return traj;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kTrajMagic = "VDCTRAJ 1";

void put_f32(std::string& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float get_f32(const std::string& in, std::size_t at) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace

ModelSpec spec_from_description(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw FormatError("malformed model description '" + text + "'");
    kv[part.substr(0, eq)] = part.substr(eq + 1);
  }
  try {
    ModelSpec spec;
    spec.arch = parse_arch(kv.at("arch"));
    int l = 0, c = 0, h = 0, w = 0;
    if (std::sscanf(kv.at("input").c_str(), "%dx%dx%dx%d", &l, &c, &h, &w) != 4) {
      throw FormatError("malformed input shape in '" + text + "'");
    }
    spec.input_length = l;
    spec.channels = c;
    spec.height = h;
    spec.width = w;
    spec.num_classes = std::stoi(kv.at("classes"));
    spec.width_mult = std::stod(kv.at("width"));
    std::stringstream ns(kv.at("norm"));
    std::string pair;
    while (std::getline(ns, pair, ',')) {
      const auto slash = pair.find('/');
      spec.norm_mean.push_back(std::stof(pair.substr(0, slash)));
      spec.norm_std.push_back(std::stof(pair.substr(slash + 1)));
    }
    return spec;
  } catch (const std::out_of_range&) {
    throw FormatError("incomplete model description '" + text + "'");
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed model description '" + text + "'");
  }
}

void save_trajectory(const ExpertTrajectory& traj, const fs::path& path) {
  const std::size_t P = traj.snapshots.empty() ? 0 : traj.snapshots.front().size();
  for (const auto& s : traj.snapshots) {
    if (s.size() != P) throw DomainError("trajectory snapshots differ in length");
  }
  std::ostringstream head;
  head.precision(17);
  head << kTrajMagic << "\n";
  head << "arch " << to_string(traj.spec.arch) << "\n";
  head << "spec " << describe(traj.spec) << "\n";
  head << "spec_hash " << traj.spec_hash << "\n";
  head << "epochs " << traj.epochs << "\n";
  head << "seed " << traj.seed << "\n";
  head << "param_count " << P << "\n";
  head << "buffer_count " << traj.running_stats.size() << "\n";
  head << "snapshots " << traj.snapshots.size() << "\n";
  head << "config " << traj.config << "\n";
  head << "accuracy";
  for (double a : traj.epoch_accuracy) head << " " << a;
  head << "\nend\n";
  std::string out = head.str();
  out.reserve(out.size() + 4 * (P * traj.snapshots.size() + traj.running_stats.size()));
  for (const auto& s : traj.snapshots) {
    for (float v : s) put_f32(out, v);
  }
  for (float v : traj.running_stats) put_f32(out, v);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write trajectory '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("short write to '" + path.string() + "'");
}

ExpertTrajectory load_trajectory(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open trajectory '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = "trajectory '" + path.string() + "'";

  std::map<std::string, std::string> header;
  std::size_t pos = 0;
  bool first = true, ended = false;
  while (pos < bytes.size()) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    if (first) {
      if (line != kTrajMagic) throw FormatError("bad magic in " + where);
      first = false;
      continue;
    }
    if (line == "end") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    header[line.substr(0, sp)] = sp == std::string::npos ? "" : line.substr(sp + 1);
  }
  if (first || !ended) throw FormatError("truncated header in " + where);

  ExpertTrajectory traj;
  std::size_t P = 0, nbuf = 0, nsnap = 0;
  try {
    traj.spec = spec_from_description(header.at("spec"));
    traj.spec_hash = header.at("spec_hash");
    traj.epochs = std::stoi(header.at("epochs"));
    traj.seed = std::stoull(header.at("seed"));
    P = std::stoull(header.at("param_count"));
    nbuf = std::stoull(header.at("buffer_count"));
    nsnap = std::stoull(header.at("snapshots"));
    traj.config = header.count("config") ? header.at("config") : "";
    if (header.count("accuracy")) {
      std::stringstream as(header.at("accuracy"));
      double a = 0;
      while (as >> a) traj.epoch_accuracy.push_back(a);
    }
  } catch (const std::out_of_range&) {
    throw FormatError("missing header field in " + where);
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed header field in " + where);
  }
  if (to_string(traj.spec.arch) != header.at("arch")) throw FormatError("arch/spec disagree in " + where);
  if (spec_hash(traj.spec) != traj.spec_hash) throw FormatError("spec hash mismatch in " + where);
  if (nsnap != static_cast<std::size_t>(traj.epochs) + 1) throw FormatError("snapshot count != epochs + 1 in " + where);

  const std::size_t expected = 4 * (P * nsnap + nbuf);
  if (bytes.size() - pos != expected) {
    throw FormatError("truncated payload in " + where + " (" + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(expected) + ")");
  }
  traj.snapshots.assign(nsnap, ParamVector(P));
  for (std::size_t s = 0; s < nsnap; ++s) {
    for (std::size_t i = 0; i < P; ++i, pos += 4) traj.snapshots[s][i] = get_f32(bytes, pos);
  }
  traj.running_stats.resize(nbuf);
  for (std::size_t i = 0; i < nbuf; ++i, pos += 4) traj.running_stats[i] = get_f32(bytes, pos);
  return traj;
}

ExpertTrajectory load_trajectory(const fs::path& path, const ModelSpec& expected) {
  ExpertTrajectory traj = load_trajectory(path);
  if (traj.spec.arch != expected.arch || traj.spec_hash != spec_hash(expected)) {
    throw CompatibilityError("trajectory '" + path.string() + "' was recorded for " + describe(traj.spec) +
                             ", expected " + describe(expected));
  }
  const Network net = Network::build(expected);
  if (traj.snapshots.front().size() != net.param_count() || traj.running_stats.size() != net.buffer_count()) {
    throw CompatibilityError("trajectory '" + path.string() + "' parameter layout does not match the model");
  }
  return traj;
}

std::string model_fingerprint(const TrainedModel& model) {
  std::string bytes = describe(model.spec) + "\n";
  for (float v : model.params) put_f32(bytes, v);
  for (float v : model.buffers) put_f32(bytes, v);
  return short_hash(bytes);
}

std::vector<fs::path> list_trajectories(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw FormatError("trajectory directory '" + dir.string() + "' does not exist");
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vdct") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace vdc::nn
