#include "vdc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vdc/dataio.hpp"
#include "vdc/distill_dm.hpp"
#include "vdc/distill_tm.hpp"
#include "vdc/evalproto.hpp"
#include "vdc/hash.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/select.hpp"

namespace vdc::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string method_category(const std::string& method) {
  static const std::set<std::string> selection = {"random", "herding", "rded"};
  static const std::set<std::string> distillation = {"edc", "edc_nocw", "datm"};
  if (selection.count(method)) return "selection";
  if (distillation.count(method)) return "distillation";
  return "reference";
}

// ---------------------------------------------------------------------------
// Results table

namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string render_columns(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      line += i + 1 == row.size() ? row[i] : pad(row[i], width[i]) + "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

struct Summary {
  std::string method;
  int ipc = 0, tc = 0;
  std::string labeling;
  std::vector<double> acc;
  double mean = 0, sd = 0;
  std::string mark;
};

}  // namespace

std::string render_table(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw DomainError("render_table: no results");
  std::vector<std::vector<std::string>> cells = {{"method", "category", "ipc", "T_c", "labeling", "seed", "accuracy"}};
  for (const auto& r : rows) {
    cells.push_back({r.method, method_category(r.method), std::to_string(r.ipc), std::to_string(r.stored_length),
                     r.labeling, std::to_string(r.seed), fixed(r.accuracy)});
  }

  std::vector<Summary> sums;
  for (const auto& r : rows) {
    auto it = std::find_if(sums.begin(), sums.end(), [&](const Summary& s) {
      return s.method == r.method && s.ipc == r.ipc && s.tc == r.stored_length && s.labeling == r.labeling;
    });
    if (it == sums.end()) {
      sums.push_back({r.method, r.ipc, r.stored_length, r.labeling, {}, 0, 0, ""});
      it = sums.end() - 1;
    }
    it->acc.push_back(r.accuracy);
  }
  for (auto& s : sums) {
    s.mean = std::accumulate(s.acc.begin(), s.acc.end(), 0.0) / static_cast<double>(s.acc.size());
    double v = 0;
    for (double a : s.acc) v += (a - s.mean) * (a - s.mean);
    s.sd = s.acc.size() > 1 ? std::sqrt(v / static_cast<double>(s.acc.size() - 1)) : 0.0;
  }
  // Means are compared at printed precision so displayed ties are real ties.
  const auto key = [](double m) { return std::llround(m * 1e4); };
  for (std::size_t i = 0; i < sums.size(); ++i) {
    const auto same_setting = [&](const Summary& o) {
      return o.ipc == sums[i].ipc && o.tc == sums[i].tc && o.labeling == sums[i].labeling;
    };
    const std::string cat = method_category(sums[i].method);
    if (cat == "reference") continue;
    long long best_cat = LLONG_MIN, best_all = LLONG_MIN;
    int n_cat = 0, n_all = 0;
    for (const auto& o : sums) {
      const std::string oc = method_category(o.method);
      if (!same_setting(o) || oc == "reference") continue;
      best_all = std::max(best_all, key(o.mean));
      if (oc == cat) best_cat = std::max(best_cat, key(o.mean));
    }
    for (const auto& o : sums) {
      const std::string oc = method_category(o.method);
      if (!same_setting(o) || oc == "reference") continue;
      if (key(o.mean) == best_all) ++n_all;
      if (oc == cat && key(o.mean) == best_cat) ++n_cat;
    }
    std::string mark;
    if (key(sums[i].mean) == best_cat) mark = n_cat > 1 ? "category-best (tied)" : "category-best";
    if (key(sums[i].mean) == best_all) mark += std::string(mark.empty() ? "" : ", ") + (n_all > 1 ? "best (tied)" : "best");
    sums[i].mark = mark;
  }

  std::vector<std::vector<std::string>> summary = {
      {"method", "category", "ipc", "T_c", "labeling", "seeds", "mean", "std", "mark"}};
  for (const std::string cat : {"reference", "selection", "distillation"}) {
    for (const auto& s : sums) {
      if (method_category(s.method) != cat) continue;
      summary.push_back({s.method, cat, std::to_string(s.ipc), std::to_string(s.tc), s.labeling,
                         std::to_string(s.acc.size()), fixed(s.mean), fixed(s.sd), s.mark});
    }
  }
  return "# per-seed results\n" + render_columns(cells) + "\n# summary\n" + render_columns(summary);
}

std::string rows_to_tsv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "method\tipc\tT_c\tlabeling\tseed\taccuracy\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.method << "\t" << r.ipc << "\t" << r.stored_length << "\t" << r.labeling << "\t" << r.seed << "\t"
       << r.accuracy << "\n";
  }
  return os.str();
}

std::vector<ResultRow> rows_from_tsv(const std::string& text) {
  std::vector<ResultRow> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ls(line);
    ResultRow r;
    if (!(ls >> r.method >> r.ipc >> r.stored_length >> r.labeling >> r.seed >> r.accuracy)) {
      throw FormatError("results line " + std::to_string(lineno) + " is malformed");
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Manifest

void validate_manifest(const RunManifest& m) {
  std::set<std::string> seen;
  for (const auto& s : m.stages) {
    for (const auto& in : s.inputs) {
      if (!seen.count(in)) throw StageError(s.id, "input '" + in + "' is not an earlier stage");
    }
    if (!seen.insert(s.id).second) throw StageError(s.id, "duplicate stage id");
  }
}

std::string manifest_json(const RunManifest& m) {
  ordered_json j = ordered_json::array();
  for (const auto& s : m.stages) {
    ordered_json e;
    e["stage"] = s.stage;
    e["id"] = s.id;
    e["key"] = s.key;
    e["config_hash"] = s.config_hash;
    e["inputs"] = s.inputs;
    e["output"] = s.output;
    e["checksums"] = s.checksums;
    e["seeds"] = s.seeds;
    e["wall_seconds"] = s.wall_seconds;
    e["cache_hit"] = s.cache_hit;
    j.push_back(e);
  }
  return j.dump(2);
}

fs::path cache_root() {
  if (const char* env = std::getenv("VDC_CACHE_DIR"); env && *env) return fs::path(env);
  return fs::path(".vdc_cache");
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CacheError("cannot read '" + p.string() + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  f << s;
}

std::string file_crc(const fs::path& p) {
  const std::string s = read_text(p);
  return crc32_hex(std::as_bytes(std::span<const char>(s.data(), s.size())));
}

std::map<std::string, std::string> checksum_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "stage.json") continue;
    out[rel] = file_crc(e.path());
  }
  return out;
}

class Runner {
 public:
  Runner(fs::path cache, Logger log) : cache_(std::move(cache)), log_(std::move(log)) {}

  // Runs `produce` into a fresh directory unless an entry with the same key
  // exists. Returns the artifact directory.
  fs::path stage(const std::string& stage, const std::string& id, const std::string& material,
                 const std::vector<std::string>& inputs, const std::vector<std::uint64_t>& seeds,
                 const std::function<void(const fs::path&)>& produce) {
    StageRecord rec;
    rec.stage = stage;
    rec.id = id;
    rec.config_hash = short_hash(material);
    rec.inputs = inputs;
    rec.seeds = seeds;
    std::string keytext = stage + "\n" + material;
    for (const auto& in : inputs) keytext += "\ninput=" + keys_.at(in);
    rec.key = short_hash(keytext);
    const fs::path dir = cache_ / stage / rec.key;
    rec.output = dir.string();
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path done = dir / "stage.json";
    if (fs::exists(done)) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_text(done));
      } catch (const nlohmann::json::exception&) {
        throw CacheError("cache entry '" + dir.string() + "' has a corrupt stage record; remove that directory and rerun");
      }
      const auto stored = j.at("checksums").get<std::map<std::string, std::string>>();
      const auto actual = checksum_tree(dir);
      if (stored != actual) {
        throw CacheError("cache entry '" + dir.string() +
                         "' does not match its recorded checksums; remove that directory (or the whole cache) and "
                         "rerun");
      }
      rec.checksums = stored;
      rec.cache_hit = true;
      say("[cache] " + id);
    } else {
      say("[run]   " + id);
      const fs::path tmp = dir.string() + ".partial";
      fs::remove_all(tmp);
      fs::create_directories(tmp);
      try {
        produce(tmp);
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(id, e.what());
      }
      rec.checksums = checksum_tree(tmp);
      nlohmann::ordered_json j;
      j["stage"] = stage;
      j["key"] = rec.key;
      j["material"] = material;
      j["checksums"] = rec.checksums;
      write_text(tmp / "stage.json", j.dump(2));
      fs::remove_all(dir);
      fs::rename(tmp, dir);
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    keys_[id] = rec.key;
    manifest_.stages.push_back(rec);
    return dir;
  }

  RunManifest& manifest() { return manifest_; }
  void say(const std::string& s) const {
    if (log_) log_(s);
  }

 private:
  fs::path cache_;
  Logger log_;
  RunManifest manifest_;
  std::map<std::string, std::string> keys_;
};

struct Setting {
  int ipc = 1;
  int tc = 8;
};

std::vector<Setting> parse_settings(const std::string& text) {
  std::vector<Setting> out;
  for (const auto& s : split_list(text)) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("condense.settings entries look like IPCxT_C, got '" + s + "'");
    try {
      out.push_back({std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))});
    } catch (const std::exception&) {
      throw ConfigError("condense.settings entry '" + s + "' is not IPCxT_C");
    }
  }
  if (out.empty()) throw ConfigError("condense.settings is empty");
  return out;
}

std::string expert_material(const nn::ExpertConfig& ec) { return nn::fingerprint(ec); }

nn::ExpertConfig expert_config_from(const Config& c) {
  nn::ExpertConfig ec;
  ec.epochs = c.get_int("experts.epochs", 30);
  ec.lr = c.get_double("experts.lr", 0.01);
  ec.momentum = c.get_double("experts.momentum", 0.9);
  ec.weight_decay = c.get_double("experts.weight_decay", 0.0);
  ec.batch_size = c.get_int("experts.batch_size", 16);
  ec.horizontal_flip = c.get_bool("experts.horizontal_flip", true);
  ec.min_crop_area = c.get_double("experts.min_crop_area", 0.5);
  return ec;
}

}  // namespace

std::string default_pipeline_config() {
  std::ostringstream os;
  os << "[pipeline]\n"
     << "name = micro\n\n"
     << "[data]\n"
     << "classes = 4\nper_class = 20\nframes = 16\nheight = 16\nwidth = 16\nchannels = 3\nseed = 1\n"
     << "val_per_class = 25\nval_seed = 2\n\n"
     << "[model]\n"
     << "arch = mini_c3d\nwidth_mult = 0.5\ninput_length = 8\n\n"
     << "[experts]\n"
     << "count = 3\nepochs = 30\nlr = 0.01\nmomentum = 0.9\nweight_decay = 0\nbatch_size = 16\n"
     << "horizontal_flip = true\nmin_crop_area = 0.5\nseed_base = 100\n\n"
     << "[condense]\n"
     << "methods = random,herding,rded,edc,edc_nocw,datm\nsettings = 1x8\nseeds = 0,1,2\n\n"
     << "[rded]\nclips_per_video = 10\nfactor = 1\n\n"
     << tm::dump_config(tm::TmConfig{}) << "init = rded\n\n"
     << dm::dump_config(dm::DmConfig{}) << "init = rded\nnetworks = \n\n"
     << "[eval]\n"
     << "labelings = hard,multi_sl\nloss = mse_gt\nbase_batch = 10\nepochs = 300\nlr = 0.001\n"
     << "weight_decay = 0.01\nresized_crop = true\nmin_crop_area = 0.5\nhorizontal_flip = true\ncutmix = false\n"
     << "gt_weight = 0.1\n\n"
     << "[full]\n"
     << "enabled = true\nbase_batch = 1\nepochs = 40\n";
  return os.str();
}

PipelineResult run_pipeline(const Config& config, const fs::path& out_dir, const fs::path& cache_dir,
                            const Logger& log) {
  Runner run(cache_dir, log);

  // generate -----------------------------------------------------------------
  data::MicroSpec ms;
  ms.classes = config.get_int("data.classes", 4);
  ms.per_class = config.get_int("data.per_class", 20);
  ms.frames = config.get_int("data.frames", 16);
  ms.height = config.get_int("data.height", 16);
  ms.width = config.get_int("data.width", 16);
  ms.channels = config.get_int("data.channels", 3);
  ms.seed = static_cast<std::uint64_t>(config.get_int("data.seed", 1));
  data::MicroSpec vs = ms;
  vs.per_class = config.get_int("data.val_per_class", 25);
  vs.seed = static_cast<std::uint64_t>(config.get_int("data.val_seed", 2));
  const auto micro_text = [](const data::MicroSpec& s) {
    std::ostringstream os;
    os << "classes=" << s.classes << ";per_class=" << s.per_class << ";T=" << s.frames << ";H=" << s.height
       << ";W=" << s.width << ";C=" << s.channels << ";seed=" << s.seed;
    return os.str();
  };
  const fs::path data_dir = run.stage("generate", "generate", "train:" + micro_text(ms) + "\nval:" + micro_text(vs),
                                      {}, {ms.seed, vs.seed}, [&](const fs::path& dir) {
                                        data::write_dataset(data::generate_micro_dataset(ms), dir / "train");
                                        data::write_dataset(data::generate_micro_dataset(vs), dir / "val");
                                      });
  const data::Dataset train = data::read_dataset(data_dir / "train");
  const data::Dataset val = data::read_dataset(data_dir / "val");

  // experts ------------------------------------------------------------------
  nn::ModelSpec base;
  base.input_length = config.get_int("model.input_length", 8);
  base.channels = ms.channels;
  base.height = ms.height;
  base.width = ms.width;
  base.num_classes = ms.classes;
  base.width_mult = config.get_double("model.width_mult", 0.5);
  base.arch = nn::parse_arch(config.get("model.arch", "mini_c3d"));
  const nn::ExpertConfig ec = expert_config_from(config);
  const int expert_count = config.get_int("experts.count", 3);
  const int seed_base = config.get_int("experts.seed_base", 100);
  if (expert_count < 1) throw ConfigError("experts.count must be >= 1");

  std::vector<nn::ModelSpec> aux_specs;
  for (const auto& s : config.get_list("edc.networks", {})) {
    const nn::ModelSpec spec = nn::parse_model_spec(s, base);
    if (nn::spec_hash(spec) != nn::spec_hash(base)) aux_specs.push_back(spec);
  }
  std::string expert_mat = nn::describe(base) + "\n" + expert_material(ec) + "\ncount=" +
                           std::to_string(expert_count) + "\nseed_base=" + std::to_string(seed_base);
  for (const auto& s : aux_specs) expert_mat += "\naux=" + nn::describe(s);
  std::vector<std::uint64_t> expert_seeds;
  for (int i = 0; i < expert_count; ++i) expert_seeds.push_back(static_cast<std::uint64_t>(seed_base + i));
  const fs::path expert_dir =
      run.stage("experts", "experts", expert_mat, {"generate"}, expert_seeds, [&](const fs::path& dir) {
        const nn::Network net = nn::Network::build(base);
        for (int i = 0; i < expert_count; ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "expert_%02d.vdct", i);
          nn::save_trajectory(nn::train_expert(net, train, ec, expert_seeds[static_cast<std::size_t>(i)]), dir / name);
        }
        for (std::size_t a = 0; a < aux_specs.size(); ++a) {
          const nn::Network aux = nn::Network::build(aux_specs[a]);
          char name[32];
          std::snprintf(name, sizeof name, "aux_%02zu.vdct", a);
          nn::save_trajectory(nn::train_expert(aux, train, ec, static_cast<std::uint64_t>(seed_base) + 1000 + a),
                              dir / name);
        }
      });
  std::vector<nn::ExpertTrajectory> experts;
  for (int i = 0; i < expert_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "expert_%02d.vdct", i);
    experts.push_back(nn::load_trajectory(expert_dir / name, base));
  }
  const nn::TrainedModel teacher = experts.front().final_model(nn::to_string(base.arch) + "-teacher");
  std::vector<nn::TrainedModel> edc_models = {teacher};
  for (std::size_t a = 0; a < aux_specs.size(); ++a) {
    char name[32];
    std::snprintf(name, sizeof name, "aux_%02zu.vdct", a);
    edc_models.push_back(
        nn::load_trajectory(expert_dir / name, aux_specs[a]).final_model(nn::to_string(aux_specs[a].arch) + "-aux"));
  }

  // condense + evaluate -----------------------------------------------------
  const auto methods = config.get_list("condense.methods", {"random", "herding", "rded", "edc", "edc_nocw", "datm"});
  const auto settings = parse_settings(config.get("condense.settings", "1x8"));
  std::vector<std::uint64_t> seeds;
  for (int s : config.get_int_list("condense.seeds", {0, 1, 2})) seeds.push_back(static_cast<std::uint64_t>(s));
  const auto labelings = config.get_list("eval.labelings", {"hard", "multi_sl"});
  eval::EvalConfig ecfg = eval::eval_config_from(config, "eval");
  const tm::TmConfig tcfg = tm::tm_config_from(config, "datm");
  dm::DmConfig dcfg = dm::dm_config_from(config, "edc");
  select::RdedConfig rcfg;
  rcfg.clips_per_video = config.get_int("rded.clips_per_video", 10);
  rcfg.factor = config.get_int("rded.factor", 1);
  const std::string datm_init = config.get("datm.init", "rded");
  const std::string edc_init = config.get("edc.init", "rded");

  const auto make_selection = [&](const std::string& method, const Setting& st, std::uint64_t seed) {
    if (method == "random") return select::select_random(train, st.ipc, st.tc, seed, base.input_length);
    if (method == "herding") return select::select_herding(train, st.ipc, st.tc, teacher);
    if (method == "rded") {
      select::RdedConfig rc = rcfg;
      rc.ipc = st.ipc;
      rc.stored_length = st.tc;
      rc.seed = seed;
      return select::select_rded(train, rc, teacher);
    }
    throw ConfigError("unknown initialization method '" + method + "'");
  };

  const std::string shared_mat = "model=" + nn::describe(base);
  std::vector<ResultRow> rows;

  for (const auto& st : settings) {
    for (const auto& method : methods) {
      for (std::uint64_t seed : seeds) {
        std::string mat = shared_mat + "\nmethod=" + method + "\nipc=" + std::to_string(st.ipc) +
                          "\ntc=" + std::to_string(st.tc) + "\nseed=" + std::to_string(seed);
        if (method == "rded") mat += "\nrded=" + std::to_string(rcfg.clips_per_video) + "," + std::to_string(rcfg.factor);
        if (method == "datm") mat += "\n" + tm::dump_config(tcfg) + "init=" + datm_init;
        if (method == "edc" || method == "edc_nocw") {
          mat += "\n" + dm::dump_config(dcfg) + "init=" + edc_init;
          for (const auto& m : edc_models) mat += "\nnet=" + nn::model_fingerprint(m);
        }
        const std::string cid = "condense/" + method + "/" + std::to_string(st.ipc) + "x" + std::to_string(st.tc) +
                                "/s" + std::to_string(seed);
        const fs::path cdir = run.stage("condense", cid, mat, {"generate", "experts"}, {seed}, [&](const fs::path& dir) {
          data::CondensedSet set;
          if (method == "datm") {
            set = tm::run_datm(experts, tcfg, make_selection(datm_init, st, seed), seed);
          } else if (method == "edc" || method == "edc_nocw") {
            dm::DmConfig d = dcfg;
            d.category_wise = method == "edc";
            dm::CollectOptions opt;
            opt.per_class = d.category_wise;
            opt.clips_per_video = d.clips_per_video;
            opt.layers = d.layers;
            const auto targets = dm::cached_stat_targets(train, edc_models, opt, cache_dir);
            set = dm::run_edc(edc_models, targets, d, make_selection(edc_init, st, seed), seed);
          } else {
            set = make_selection(method, st, seed);
          }
          data::write_condensed(set, dir);
        });
        const data::CondensedSet condensed = data::read_condensed(cdir);

        for (const auto& lab : labelings) {
          eval::EvalConfig e = ecfg;
          e.labeling = data::parse_labeling_mode(lab);
          e.seeds = {seed};
          const std::string emat = "eval=" + eval::fingerprint(e) + "\nseed=" + std::to_string(seed) +
                                   "\narch=" + nn::describe(base) + "\nteacher=" + nn::model_fingerprint(teacher);
          const std::string eid = "evaluate/" + method + "/" + std::to_string(st.ipc) + "x" + std::to_string(st.tc) +
                                  "/" + lab + "/s" + std::to_string(seed);
          const fs::path edir = run.stage("evaluate", eid, emat, {cid}, {seed}, [&](const fs::path& dir) {
            const auto rep = eval::evaluate(condensed, base, e, val, &teacher);
            write_text(dir / "report.json", eval::to_json(rep));
          });
          const auto rep = nlohmann::json::parse(read_text(edir / "report.json"));
          rows.push_back({method, st.ipc, st.tc, lab, seed, rep.at("mean").get<double>()});
        }
      }
    }
  }

  if (config.get_bool("full.enabled", true)) {
    eval::EvalConfig f = ecfg;
    f.labeling = data::LabelingMode::hard;
    f.base_batch = config.get_int("full.base_batch", 1);
    f.epochs = config.get_int("full.epochs", 40);
    const data::CondensedSet full = eval::full_dataset_set(train, base.input_length);
    for (std::uint64_t seed : seeds) {
      f.seeds = {seed};
      const std::string fid = "evaluate/full/s" + std::to_string(seed);
      const std::string fmat = "eval=" + eval::fingerprint(f) + "\nseed=" + std::to_string(seed) +
                               "\narch=" + nn::describe(base);
      const fs::path fdir = run.stage("evaluate", fid, fmat, {"generate"}, {seed}, [&](const fs::path& dir) {
        write_text(dir / "report.json", eval::to_json(eval::evaluate(full, base, f, val)));
      });
      const auto rep = nlohmann::json::parse(read_text(fdir / "report.json"));
      rows.push_back({"full", full.ipc, full.stored_length(), "hard", seed, rep.at("mean").get<double>()});
    }
    std::stable_partition(rows.begin(), rows.end(), [](const ResultRow& r) { return r.method == "full"; });
  }

  validate_manifest(run.manifest());
  PipelineResult res;
  res.manifest = run.manifest();
  res.rows = rows;
  res.table = render_table(rows);
  fs::create_directories(out_dir);
  write_text(out_dir / "table.txt", res.table);
  write_text(out_dir / "results.tsv", rows_to_tsv(rows));
  write_text(out_dir / "manifest.json", manifest_json(res.manifest));
  return res;
}

}  // namespace vdc::pipeline
