#include "vdc/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vdc/hash.hpp"
#include "vdc/rng.hpp"

namespace vdc::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (const auto& item : items) {
    if (item.hard_label >= 0 && item.hard_label < num_classes) ++counts[static_cast<std::size_t>(item.hard_label)];
  }
  return counts;
}

std::vector<int> Dataset::indices_of_class(int label) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].hard_label == label) out.push_back(static_cast<int>(i));
  }
  return out;
}

void validate_item(const VideoItem& item, int num_classes) {
  const std::string where = "video '" + item.id + "': ";
  if (item.frames.rank() != 4) throw DomainError(where + "frames must be [T, C, H, W]");
  if (item.frames.dim(0) < 1) throw DomainError(where + "needs at least one frame");
  if (item.hard_label < 0 || item.hard_label >= num_classes) {
    throw DomainError(where + "label " + std::to_string(item.hard_label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
  }
  for (float v : item.frames.data) {
    if (!std::isfinite(v)) throw DomainError(where + "non-finite frame value");
  }
  if (item.soft_label) {
    const auto& p = *item.soft_label;
    if (static_cast<int>(p.size()) != num_classes) throw DomainError(where + "soft label length mismatch");
    double sum = 0;
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError(where + "soft label must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DomainError(where + "soft label does not sum to 1");
  }
}

void validate_dataset(const Dataset& dataset) {
  if (dataset.num_classes < 1) throw DomainError("dataset needs at least one class");
  std::set<std::string> ids;
  for (const auto& item : dataset.items) {
    validate_item(item, dataset.num_classes);
    if (!ids.insert(item.id).second) throw DomainError("duplicate video id '" + item.id + "'");
  }
}

DatasetStats compute_stats(std::span<const VideoMeta> videos, int num_classes) {
  if (videos.empty()) throw DomainError("compute_stats: empty dataset");
  if (num_classes < 1) throw DomainError("compute_stats: num_classes must be positive");
  DatasetStats s;
  s.num_videos = videos.size();
  s.num_classes = num_classes;
  s.per_class_counts.assign(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> lengths;
  lengths.reserve(videos.size());
  long long total = 0;
  for (const auto& v : videos) {
    if (v.label < 0 || v.label >= num_classes) throw DomainError("compute_stats: label out of range");
    if (v.frames < 1) throw DomainError("compute_stats: video with no frames");
    ++s.per_class_counts[static_cast<std::size_t>(v.label)];
    lengths.push_back(v.frames);
    total += v.frames;
  }
  s.mean_frames = static_cast<double>(total) / static_cast<double>(videos.size());
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  s.median_frames = n % 2 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
  s.per_class_mean = static_cast<double>(n) / static_cast<double>(num_classes);
  return s;
}

DatasetStats compute_stats(const Dataset& dataset) {
  std::vector<VideoMeta> meta;
  meta.reserve(dataset.items.size());
  for (const auto& item : dataset.items) meta.push_back({item.hard_label, item.num_frames()});
  return compute_stats(meta, dataset.num_classes);
}

// ---------------------------------------------------------------------------
// Micro generator

std::string archetype_name(int label) {
  static const char* kNames[kMotionArchetypes] = {"move_down", "move_up", "move_horizontal", "expand",
                                                  "shrink",    "diagonal", "blink",          "oscillate"};
  return kNames[((label % kMotionArchetypes) + kMotionArchetypes) % kMotionArchetypes];
}

namespace {

// Length of [a0, a1) ∩ [b0, b1).
double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

struct SpriteState {
  double y, x, size;
  bool visible;
};

Tensor<float> render_video(int label, const MicroSpec& spec, Rng& rng) {
  const int T = spec.frames, C = spec.channels, H = spec.height, W = spec.width;
  const double h = H, w = W;

  // Flat dark background per channel and a near-white sprite, so appearance
  // carries almost no class information.
  std::vector<float> background(static_cast<std::size_t>(C * H * W));
  for (int c = 0; c < C; ++c) {
    const auto base = static_cast<float>(rng.uniform(0.1, 0.12));
    std::fill_n(background.begin() + static_cast<std::ptrdiff_t>(c * H * W), H * W, base);
  }
  std::vector<double> color(static_cast<std::size_t>(C));
  for (auto& v : color) v = rng.uniform(0.95, 1.0);

  const double base_size = rng.uniform(0.2, 0.27) * std::min(h, w);
  const double span = T - 1;
  const int archetype = label % kMotionArchetypes;
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;

  // Trajectory parameters, chosen so the sprite stays inside the frame.
  double y0 = 0, x0 = 0, dy = 0, dx = 0, s0 = base_size, s1 = base_size;
  double osc_amp = 0, osc_phase = 0;
  int blink_period = 2;
  const double travel_y = rng.uniform(0.55, 0.75) * (h - base_size - 1);
  const double travel_x = rng.uniform(0.55, 0.75) * (w - base_size - 1);
  switch (archetype) {
    case 0:  // down
      dy = travel_y;
      break;
    case 1:  // up
      dy = -travel_y;
      break;
    case 2:  // horizontal, random direction
      dx = sign * travel_x;
      break;
    case 3:  // expand
      s0 = 0.45 * base_size;
      s1 = std::min(1.9 * base_size, 0.6 * std::min(h, w));
      break;
    case 4:  // shrink
      s0 = std::min(1.9 * base_size, 0.6 * std::min(h, w));
      s1 = 0.45 * base_size;
      break;
    case 5:  // diagonal downward, random horizontal direction
      dy = 0.75 * travel_y;
      dx = sign * 0.75 * travel_x;
      break;
    case 6:  // blink in place
      blink_period = rng.uniform_int(2, 3);
      break;
    case 7:  // vertical oscillation
      osc_amp = rng.uniform(0.25, 0.35) * (h - base_size - 1);
      osc_phase = rng.uniform(0, 2 * std::numbers::pi);
      break;
    default:
      break;
  }
  const double smax = std::max(s0, s1);
  auto place = [&](double travel, double extent, double limit) {
    const double lo = std::max(0.0, -travel) + std::max(0.0, (smax - extent) / 2);
    const double hi = limit - smax - std::max(0.0, travel) + std::max(0.0, (smax - extent) / 2);
    return hi > lo ? rng.uniform(lo, hi) : lo;
  };
  y0 = archetype == 7 ? rng.uniform(osc_amp, std::max(osc_amp, h - base_size - osc_amp)) : place(dy, s0, h);
  x0 = place(dx, s0, w);

  Tensor<float> frames({static_cast<std::size_t>(T), static_cast<std::size_t>(C), static_cast<std::size_t>(H),
                        static_cast<std::size_t>(W)});
  const int blink_offset = rng.uniform_int(0, 1);
  for (int t = 0; t < T; ++t) {
    const double u = span > 0 ? t / span : 0.0;
    SpriteState s{};
    s.size = s0 + (s1 - s0) * u;
    // Size changes grow/shrink around the sprite's center.
    s.y = y0 + dy * u - (s.size - s0) / 2;
    s.x = x0 + dx * u - (s.size - s0) / 2;
    if (archetype == 7) s.y = y0 + osc_amp * std::sin(2 * std::numbers::pi * t / 8.0 + osc_phase);
    s.visible = archetype != 6 || ((t / blink_period + blink_offset) % 2 == 0);
    for (int c = 0; c < C; ++c) {
      for (int yy = 0; yy < H; ++yy) {
        const double cy = s.visible ? overlap(yy, yy + 1, s.y, s.y + s.size) : 0.0;
        for (int xx = 0; xx < W; ++xx) {
          const double cov = cy * overlap(xx, xx + 1, s.x, s.x + s.size);
          const std::size_t bi = static_cast<std::size_t>((c * H + yy) * W + xx);
          double v = background[bi] * (1 - cov) + color[static_cast<std::size_t>(c)] * cov;
          v += rng.normal(0.0, 0.01);
          frames.data[static_cast<std::size_t>(t) * C * H * W + bi] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return frames;
}

}  // namespace

Dataset generate_micro_dataset(const MicroSpec& spec) {
  if (spec.classes < 2) throw ConfigError("micro dataset needs at least 2 classes");
  if (spec.classes > kMotionArchetypes) {
    throw ConfigError("micro dataset supports at most " + std::to_string(kMotionArchetypes) + " classes");
  }
  if (spec.frames < 8) throw ConfigError("micro dataset needs T >= 8 frames");
  if (spec.per_class < 1) throw ConfigError("micro dataset needs per_class >= 1");
  if (spec.height < 8 || spec.width < 8) throw ConfigError("micro dataset needs H, W >= 8");
  if (spec.channels < 1) throw ConfigError("micro dataset needs at least one channel");

  Dataset ds;
  ds.num_classes = spec.classes;
  ds.items.reserve(static_cast<std::size_t>(spec.classes * spec.per_class));
  // Items are interleaved by class so any prefix is roughly balanced.
  for (int i = 0; i < spec.per_class; ++i) {
    for (int c = 0; c < spec.classes; ++c) {
      Rng rng = Rng::derive(spec.seed, "micro:" + std::to_string(c) + ":" + std::to_string(i));
      VideoItem item;
      char id[64];
      std::snprintf(id, sizeof id, "c%02d_v%04d", c, i);
      item.id = id;
      item.hard_label = c;
      item.frames = render_video(c, spec, rng);
      ds.items.push_back(std::move(item));
    }
  }
  return ds;
}

std::string to_string(LabelingMode m) {
  switch (m) {
    case LabelingMode::hard:
      return "hard";
    case LabelingMode::soft:
      return "soft";
    case LabelingMode::multi_sl:
      return "multi_sl";
  }
  return "?";
}

LabelingMode parse_labeling_mode(const std::string& s) {
  if (s == "hard") return LabelingMode::hard;
  if (s == "soft") return LabelingMode::soft;
  if (s == "multi_sl" || s == "multi-sl") return LabelingMode::multi_sl;
  throw ConfigError("unknown labeling mode '" + s + "'");
}

void validate_condensed(const CondensedSet& set) {
  validate_dataset(set.data);
  const auto counts = set.data.class_counts();
  if (set.ipc < 1) throw DomainError("condensed set ipc must be >= 1");
  if (set.data.items.size() != static_cast<std::size_t>(set.ipc * set.data.num_classes)) {
    throw DomainError("condensed set has " + std::to_string(set.data.items.size()) + " items, expected ipc*C = " +
                      std::to_string(set.ipc * set.data.num_classes));
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] != set.ipc) {
      throw DomainError("condensed class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                        " items, expected " + std::to_string(set.ipc));
    }
  }
  for (const auto& item : set.data.items) {
    if (item.num_frames() != set.plan.stored_length) {
      throw DomainError("condensed item '" + item.id + "' has " + std::to_string(item.num_frames()) +
                        " frames, expected T_c = " + std::to_string(set.plan.stored_length));
    }
  }
  temporal::validate(set.plan);
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

constexpr char kMagic[4] = {'V', 'D', 'C', '1'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::span<const std::byte> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::vector<std::byte> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(buf.size());
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

void write_file(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

std::span<const std::byte> payload_of(std::span<const std::byte> file) { return file.subspan(kHeaderBytes); }

json item_json(const VideoItem& item, const std::string& file, const std::string& checksum) {
  json j;
  j["id"] = item.id;
  j["class"] = item.hard_label;
  j["T"] = item.num_frames();
  j["C"] = item.channels();
  j["H"] = item.height();
  j["W"] = item.width();
  j["file"] = file;
  j["checksum"] = checksum;
  if (item.soft_label) j["soft_label"] = *item.soft_label;
  return j;
}

json dataset_manifest(const Dataset& dataset, const fs::path& dir) {
  validate_dataset(dataset);
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "vdc-dataset";
  manifest["version"] = 1;
  manifest["num_classes"] = dataset.num_classes;
  json items = json::array();
  for (const auto& item : dataset.items) {
    const auto bytes = encode_video(item.frames);
    const std::string file = item.id + ".bin";
    write_file(dir / file, bytes);
    items.push_back(item_json(item, file, crc32_hex(payload_of(bytes))));
  }
  manifest["items"] = std::move(items);
  return manifest;
}

void write_manifest(const json& manifest, const fs::path& dir) {
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", std::as_bytes(std::span<const char>(text.data(), text.size())));
}

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw FormatError("missing manifest '" + path.string() + "'");
  const auto bytes = read_file(path);
  try {
    return json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

Dataset dataset_from_manifest(const json& manifest, const fs::path& dir) {
  const std::string where = (dir / "manifest.json").string();
  Dataset ds;
  try {
    if (manifest.at("format").get<std::string>() != "vdc-dataset") throw FormatError("unexpected format in " + where);
    ds.num_classes = manifest.at("num_classes").get<int>();
    for (const auto& j : manifest.at("items")) {
      VideoItem item;
      item.id = j.at("id").get<std::string>();
      item.hard_label = j.at("class").get<int>();
      const int T = j.at("T").get<int>();
      const int C = j.at("C").get<int>();
      const int H = j.at("H").get<int>();
      const int W = j.at("W").get<int>();
      const fs::path file = dir / j.at("file").get<std::string>();
      const auto bytes = read_file(file);
      item.frames = decode_video(bytes, file.string(), C, H, W);
      if (item.num_frames() != T) throw FormatError("frame count mismatch in '" + file.string() + "'");
      const std::string expected = j.at("checksum").get<std::string>();
      const std::string actual = crc32_hex(payload_of(bytes));
      if (expected != actual) {
        throw FormatError("checksum mismatch in '" + file.string() + "' (manifest " + expected + ", payload " +
                          actual + ")");
      }
      if (j.contains("soft_label")) item.soft_label = j.at("soft_label").get<std::vector<double>>();
      ds.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest '" + where + "': " + e.what());
  }
  try {
    validate_dataset(ds);
  } catch (const DomainError& e) {
    throw FormatError(std::string("invalid dataset in '") + where + "': " + e.what());
  }
  return ds;
}

}  // namespace

std::vector<std::byte> encode_video(const Tensor<float>& frames) {
  const auto T = static_cast<std::uint32_t>(frames.dim(0));
  const auto chw = static_cast<std::uint32_t>(frames.size() / frames.dim(0));
  std::vector<std::byte> out;
  out.reserve(kHeaderBytes + frames.size() * 4);
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, T);
  put_u32(out, chw);
  put_u32(out, 0);
  for (float v : frames.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor<float> decode_video(std::span<const std::byte> bytes, const std::string& name, int channels, int height,
                           int width) {
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated header in '" + name + "'");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic in '" + name + "'");
  const std::uint32_t T = get_u32(bytes, 4);
  const std::uint32_t chw = get_u32(bytes, 8);
  if (chw != static_cast<std::uint32_t>(channels * height * width)) {
    throw FormatError("header C*H*W=" + std::to_string(chw) + " disagrees with manifest in '" + name + "'");
  }
  const std::size_t count = static_cast<std::size_t>(T) * chw;
  if (bytes.size() != kHeaderBytes + count * 4) {
    throw FormatError("truncated payload in '" + name + "' (" + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(kHeaderBytes + count * 4) + ")");
  }
  Tensor<float> frames({T, static_cast<std::size_t>(channels), static_cast<std::size_t>(height),
                        static_cast<std::size_t>(width)});
  for (std::size_t i = 0; i < count; ++i) frames.data[i] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
  return frames;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) { write_manifest(dataset_manifest(dataset, dir), dir); }

Dataset read_dataset(const fs::path& dir) { return dataset_from_manifest(read_manifest(dir), dir); }

void write_condensed(const CondensedSet& set, const fs::path& dir) {
  validate_condensed(set);
  json manifest = dataset_manifest(set.data, dir);
  json c;
  c["ipc"] = set.ipc;
  c["labeling_mode"] = to_string(set.labeling);
  c["sampling_plan"] = {{"method", temporal::to_string(set.plan.method)},
                        {"T_c", set.plan.stored_length},
                        {"L", set.plan.input_length},
                        {"W", set.plan.window},
                        {"interpolation", temporal::to_string(set.plan.interpolation)}};
  json prov;
  prov["method"] = set.provenance.method;
  prov["config_hash"] = set.provenance.config_hash;
  prov["networks"] = set.provenance.networks;
  prov["extra"] = set.provenance.extra;
  c["provenance"] = prov;
  manifest["condensed"] = c;
  write_manifest(manifest, dir);
}

bool is_condensed_dir(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) return false;
  return read_manifest(dir).contains("condensed");
}

CondensedSet read_condensed(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  CondensedSet set;
  set.data = dataset_from_manifest(manifest, dir);
  try {
    const json& c = manifest.at("condensed");
    set.ipc = c.at("ipc").get<int>();
    set.labeling = parse_labeling_mode(c.at("labeling_mode").get<std::string>());
    const json& p = c.at("sampling_plan");
    set.plan.method = temporal::parse_sampling_method(p.at("method").get<std::string>());
    set.plan.stored_length = p.at("T_c").get<int>();
    set.plan.input_length = p.at("L").get<int>();
    set.plan.window = p.at("W").get<int>();
    set.plan.interpolation = temporal::parse_interpolation(p.at("interpolation").get<std::string>());
    const json& prov = c.at("provenance");
    set.provenance.method = prov.at("method").get<std::string>();
    set.provenance.config_hash = prov.at("config_hash").get<std::string>();
    set.provenance.networks = prov.at("networks").get<std::vector<std::string>>();
    set.provenance.extra = prov.at("extra").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("malformed condensed manifest in '" + dir.string() + "': " + e.what());
  }
  try {
    validate_condensed(set);
  } catch (const Error& e) {
    throw FormatError("invalid condensed set in '" + dir.string() + "': " + e.what());
  }
  return set;
}

std::string dataset_hash(const Dataset& dataset) {
  std::string acc = "classes=" + std::to_string(dataset.num_classes) + ";";
  for (const auto& item : dataset.items) {
    const auto bytes = encode_video(item.frames);
    acc += item.id + ":" + std::to_string(item.hard_label) + ":" + crc32_hex(bytes) + ":" +
           sha256_hex(std::span<const std::byte>(bytes)).substr(0, 16);
    if (item.soft_label) {
      for (double p : *item.soft_label) {
        acc += ",";
        acc += std::to_string(std::bit_cast<std::uint64_t>(p));
      }
    }
    acc += ";";
  }
  return short_hash(acc);
}

}  // namespace vdc::data
