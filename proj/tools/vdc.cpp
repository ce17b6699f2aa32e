#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vdc/config.hpp"
#include "vdc/dataio.hpp"
#include "vdc/distill_dm.hpp"
#include "vdc/distill_tm.hpp"
#include "vdc/error.hpp"
#include "vdc/evalproto.hpp"
#include "vdc/experiment.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/select.hpp"
#include "vdc/temporal.hpp"

namespace fs = std::filesystem;
using namespace vdc;

namespace {

nn::ModelSpec spec_for(const data::Dataset& ds, const std::string& arch, double width_mult, int input_length) {
  if (ds.items.empty()) throw DomainError("dataset is empty");
  nn::ModelSpec s;
  s.arch = nn::parse_arch(arch);
  s.width_mult = width_mult;
  s.input_length = input_length;
  s.channels = ds.items.front().channels();
  s.height = ds.items.front().height();
  s.width = ds.items.front().width();
  s.num_classes = ds.num_classes;
  return s;
}

nn::TrainedModel load_teacher(const std::string& path) {
  return nn::load_trajectory(path).final_model(fs::path(path).stem().string());
}

Config load_config(const std::string& path) { return path.empty() ? Config{} : Config::load(path); }

void print_stats(const data::DatasetStats& s) {
  std::printf("videos        %zu\n", s.num_videos);
  std::printf("classes       %d\n", s.num_classes);
  std::printf("mean frames   %.3f\n", s.mean_frames);
  std::printf("median frames %.3f\n", s.median_frames);
  std::printf("per class     %.3f\n", s.per_class_mean);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video dataset condensation toolkit"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic micro video dataset");
  data::MicroSpec ms;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", ms.classes, "Number of classes")->capture_default_str();
  gen->add_option("--per-class", ms.per_class, "Videos per class")->capture_default_str();
  gen->add_option("--frames", ms.frames, "Frames per video")->capture_default_str();
  gen->add_option("--height", ms.height)->capture_default_str();
  gen->add_option("--width", ms.width)->capture_default_str();
  gen->add_option("--channels", ms.channels)->capture_default_str();
  gen->add_option("--seed", ms.seed)->capture_default_str();

  // stats
  auto* st = app.add_subcommand("stats", "Dataset statistics and compression ratios");
  std::string st_data, st_manifest;
  int st_ipc = 0, st_tc = 8;
  st->add_option("--data", st_data, "Dataset directory");
  st->add_option("--manifest", st_manifest, "Text file of 'label frames' lines");
  st->add_option("--ipc", st_ipc, "Report compression ratios for this IPC");
  st->add_option("--tc", st_tc, "Stored frames per condensed video")->capture_default_str();

  // trajectories
  auto* tr = app.add_subcommand("trajectories", "Train expert trajectories or list a directory of them");
  std::string tr_data, tr_out, tr_list, tr_arch = "mini_c3d";
  int tr_count = 1, tr_len = 8;
  std::uint64_t tr_seed = 100;
  double tr_wm = 0.5;
  nn::ExpertConfig ec;
  ec.epochs = 30;
  ec.lr = 0.01;
  ec.momentum = 0.9;
  ec.horizontal_flip = true;
  ec.min_crop_area = 0.5;
  tr->add_option("--data", tr_data, "Training dataset directory");
  tr->add_option("--out", tr_out, "Output directory");
  tr->add_option("--list", tr_list, "List trajectories in a directory and exit");
  tr->add_option("--count", tr_count)->capture_default_str();
  tr->add_option("--seed", tr_seed, "Seed of the first expert")->capture_default_str();
  tr->add_option("--arch", tr_arch)->capture_default_str();
  tr->add_option("--width-mult", tr_wm)->capture_default_str();
  tr->add_option("--input-length", tr_len)->capture_default_str();
  tr->add_option("--epochs", ec.epochs)->capture_default_str();
  tr->add_option("--lr", ec.lr)->capture_default_str();
  tr->add_option("--momentum", ec.momentum)->capture_default_str();
  tr->add_option("--weight-decay", ec.weight_decay)->capture_default_str();
  tr->add_option("--batch-size", ec.batch_size)->capture_default_str();
  tr->add_flag("--hflip,!--no-hflip", ec.horizontal_flip)->capture_default_str();
  tr->add_option("--min-crop-area", ec.min_crop_area, "Random resized crop area floor; 1 disables")->capture_default_str();

  // condense
  auto* co = app.add_subcommand("condense", "Build a condensed set");
  std::string co_method, co_data, co_teacher, co_out, co_config, co_traj, co_init = "rded";
  std::vector<std::string> co_networks;
  int co_ipc = 1, co_tc = 8;
  std::uint64_t co_seed = 0;
  bool co_no_cw = false, co_dump = false;
  co->add_option("--method", co_method, "random, herding, rded, edc or datm")->required();
  co->add_option("--data", co_data, "Training dataset directory");
  co->add_option("--ipc", co_ipc)->capture_default_str();
  co->add_option("--tc", co_tc, "Stored frames per video")->capture_default_str();
  co->add_option("--teacher", co_teacher, "Trajectory file whose final model is the teacher");
  co->add_option("--trajectories", co_traj, "Directory of expert trajectories (datm)");
  co->add_option("--networks", co_networks, "Trajectory files of the matched networks (edc)");
  co->add_option("--init", co_init, "Initialization for edc/datm")->capture_default_str();
  co->add_option("--seed", co_seed)->capture_default_str();
  co->add_option("--out", co_out, "Output directory");
  co->add_option("--config", co_config, "INI file with [datm], [edc] and [rded] sections");
  co->add_flag("--no-category-wise", co_no_cw, "Match global rather than per-class statistics (edc)");
  co->add_flag("--dump-config", co_dump, "Print the effective method configuration and exit");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Train fresh networks on a condensed set and report accuracy");
  std::string ev_cond, ev_val, ev_teacher, ev_out, ev_config, ev_arch = "mini_c3d", ev_label = "hard",
                                                           ev_loss = "mse_gt";
  std::vector<std::uint64_t> ev_seeds = {0, 1, 2};
  double ev_wm = 0.5;
  int ev_epochs = -1;
  ev->add_option("--condensed", ev_cond, "Condensed set directory")->required();
  ev->add_option("--val", ev_val, "Validation dataset directory")->required();
  ev->add_option("--teacher", ev_teacher, "Trajectory file of the labeling teacher");
  ev->add_option("--arch", ev_arch, "Student architecture")->capture_default_str();
  ev->add_option("--width-mult", ev_wm)->capture_default_str();
  ev->add_option("--label", ev_label, "hard, soft or multi_sl")->capture_default_str();
  ev->add_option("--loss", ev_loss, "mse_gt or kl")->capture_default_str();
  ev->add_option("--seeds", ev_seeds)->capture_default_str();
  ev->add_option("--epochs", ev_epochs, "Override the configured epoch count");
  ev->add_option("--config", ev_config, "INI file with an [eval] section");
  ev->add_option("--out", ev_out, "Write the JSON report here");

  // run
  auto* rn = app.add_subcommand("run", "Run the cached generate/experts/condense/evaluate pipeline");
  std::string rn_config, rn_out = "results", rn_cache;
  bool rn_print = false;
  rn->add_option("--config", rn_config, "Pipeline INI file");
  rn->add_option("--out", rn_out, "Directory for table.txt, results.tsv and manifest.json")->capture_default_str();
  rn->add_option("--cache", rn_cache, "Cache directory (default VDC_CACHE_DIR or .vdc_cache)");
  rn->add_flag("--print-default-config", rn_print, "Print the default pipeline configuration and exit");

  // table
  auto* tb = app.add_subcommand("table", "Render a results table from results.tsv");
  std::string tb_in;
  tb->add_option("results", tb_in, "results.tsv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      data::write_dataset(data::generate_micro_dataset(ms), gen_out);
      std::printf("wrote %d videos to %s\n", ms.classes * ms.per_class, gen_out.c_str());
    } else if (*st) {
      data::DatasetStats s;
      if (!st_data.empty()) {
        s = data::compute_stats(data::read_dataset(st_data));
      } else if (!st_manifest.empty()) {
        std::ifstream in(st_manifest);
        if (!in) throw Error("cannot read '" + st_manifest + "'");
        std::vector<data::VideoMeta> metas;
        int label = 0, frames = 0, classes = 0;
        while (in >> label >> frames) {
          metas.push_back({label, frames});
          classes = std::max(classes, label + 1);
        }
        s = data::compute_stats(metas, classes);
      } else {
        throw ConfigError("stats needs --data or --manifest");
      }
      print_stats(s);
      if (st_ipc > 0) {
        const auto r = temporal::compression_report(static_cast<double>(s.num_videos),
                                                    static_cast<double>(st_ipc) * s.num_classes, s.mean_frames, st_tc);
        std::printf("instance ratio %.6f\ntemporal ratio %.6f\ntotal ratio    %.6f (%.2f per mille)\n",
                    r.instance_ratio, r.temporal_ratio, r.total_ratio, r.total_ratio * 1000);
      }
    } else if (*tr) {
      if (!tr_list.empty()) {
        for (const auto& p : nn::list_trajectories(tr_list)) {
          const auto t = nn::load_trajectory(p);
          std::printf("%s  %s  epochs=%d seed=%llu final_acc=%.4f\n", p.filename().c_str(), nn::describe(t.spec).c_str(),
                      t.epochs, static_cast<unsigned long long>(t.seed),
                      t.epoch_accuracy.empty() ? 0.0 : t.epoch_accuracy.back());
        }
        return 0;
      }
      if (tr_data.empty() || tr_out.empty()) throw ConfigError("trajectories needs --data and --out");
      const auto ds = data::read_dataset(tr_data);
      const auto net = nn::Network::build(spec_for(ds, tr_arch, tr_wm, tr_len));
      fs::create_directories(tr_out);
      for (int i = 0; i < tr_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "expert_%02d.vdct", i);
        const auto t = nn::train_expert(net, ds, ec, tr_seed + static_cast<std::uint64_t>(i));
        nn::save_trajectory(t, fs::path(tr_out) / name);
        std::printf("%s  final_acc=%.4f\n", name, t.epoch_accuracy.back());
      }
    } else if (*co) {
      const Config cfg = load_config(co_config);
      if (co_dump) {
        if (co_method == "datm") std::cout << tm::dump_config(tm::tm_config_from(cfg, "datm"));
        else if (co_method == "edc") std::cout << dm::dump_config(dm::dm_config_from(cfg, "edc"));
        else std::cout << "[" << co_method << "]\nipc = " << co_ipc << "\ntc = " << co_tc << "\nseed = " << co_seed
                       << "\n";
        return 0;
      }
      if (co_out.empty()) throw ConfigError("condense needs --out");
      if (co_data.empty() && co_method != "datm") throw ConfigError("condense needs --data");
      const auto need_teacher = [&]() {
        if (co_teacher.empty()) throw ConfigError("method '" + co_method + "' needs --teacher");
        return load_teacher(co_teacher);
      };
      data::Dataset ds;
      if (!co_data.empty()) ds = data::read_dataset(co_data);
      const auto selection = [&](const std::string& m) {
        if (m == "random") return select::select_random(ds, co_ipc, co_tc, co_seed);
        if (m == "herding") return select::select_herding(ds, co_ipc, co_tc, need_teacher());
        if (m == "rded") {
          select::RdedConfig rc;
          rc.ipc = co_ipc;
          rc.stored_length = co_tc;
          rc.seed = co_seed;
          rc.clips_per_video = cfg.get_int("rded.clips_per_video", rc.clips_per_video);
          rc.factor = cfg.get_int("rded.factor", rc.factor);
          return select::select_rded(ds, rc, need_teacher());
        }
        throw ConfigError("unknown method '" + m + "'");
      };
      data::CondensedSet out;
      if (co_method == "datm") {
        if (co_traj.empty()) throw ConfigError("datm needs --trajectories");
        if (co_data.empty()) throw ConfigError("datm needs --data for its initialization");
        std::vector<nn::ExpertTrajectory> trajs;
        for (const auto& p : nn::list_trajectories(co_traj)) trajs.push_back(nn::load_trajectory(p));
        if (trajs.empty()) throw ConfigError("no trajectories in '" + co_traj + "'");
        if (co_teacher.empty()) co_teacher = nn::list_trajectories(co_traj).front().string();
        out = tm::run_datm(trajs, tm::tm_config_from(cfg, "datm"), selection(co_init), co_seed);
      } else if (co_method == "edc") {
        dm::DmConfig d = dm::dm_config_from(cfg, "edc");
        if (co_no_cw) d.category_wise = false;
        std::vector<nn::TrainedModel> models;
        for (const auto& p : co_networks) models.push_back(load_teacher(p));
        if (models.empty()) models.push_back(need_teacher());
        if (co_teacher.empty()) co_teacher = co_networks.front();
        dm::CollectOptions opt;
        opt.per_class = d.category_wise;
        opt.clips_per_video = d.clips_per_video;
        opt.layers = d.layers;
        opt.seed = co_seed;
        const auto targets = dm::cached_stat_targets(ds, models, opt, pipeline::cache_root());
        out = dm::run_edc(models, targets, d, selection(co_init), co_seed);
      } else {
        out = selection(co_method);
      }
      data::write_condensed(out, co_out);
      std::printf("wrote %zu condensed videos (%s) to %s\n", out.data.items.size(), out.provenance.method.c_str(),
                  co_out.c_str());
    } else if (*ev) {
      const Config cfg = load_config(ev_config);
      eval::EvalConfig e = eval::eval_config_from(cfg, "eval");
      e.labeling = data::parse_labeling_mode(ev_label);
      e.loss = eval::parse_eval_loss(ev_loss);
      e.seeds = ev_seeds;
      if (ev_epochs >= 0) e.epochs = ev_epochs;
      const auto cond = data::read_condensed(ev_cond);
      const auto val = data::read_dataset(ev_val);
      std::optional<nn::TrainedModel> teacher;
      if (!ev_teacher.empty()) teacher = load_teacher(ev_teacher);
      const int L = teacher ? teacher->spec.input_length : 8;
      const auto rep =
          eval::evaluate(cond, spec_for(val, ev_arch, ev_wm, L), e, val, teacher ? &*teacher : nullptr);
      const std::string json = eval::to_json(rep);
      if (!ev_out.empty()) {
        std::ofstream(ev_out) << json << "\n";
      }
      std::printf("%s %s: %.4f +- %.4f over %zu seeds\n", rep.metric.c_str(), ev_label.c_str(), rep.mean, rep.stddev,
                  rep.seeds.size());
    } else if (*rn) {
      if (rn_print) {
        std::cout << pipeline::default_pipeline_config();
        return 0;
      }
      const Config cfg = rn_config.empty() ? Config::parse(pipeline::default_pipeline_config()) : Config::load(rn_config);
      const fs::path cache = rn_cache.empty() ? pipeline::cache_root() : fs::path(rn_cache);
      const auto res = pipeline::run_pipeline(cfg, rn_out, cache, [](const std::string& s) {
        std::fprintf(stderr, "%s\n", s.c_str());
      });
      std::cout << res.table;
    } else if (*tb) {
      std::ifstream in(tb_in);
      if (!in) throw Error("cannot read '" + tb_in + "'");
      std::stringstream ss;
      ss << in.rdbuf();
      std::cout << pipeline::render_table(pipeline::rows_from_tsv(ss.str()));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
