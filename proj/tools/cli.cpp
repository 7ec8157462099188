#include "cli.hpp"

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "volnet/metrics.hpp"
#include "volnet/parallel.hpp"

namespace volnet::cli {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// YAML run configuration

class ConfigReader {
 public:
  explicit ConfigReader(std::string file) : file_(std::move(file)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& message) const {
    const auto mark = node.Mark();
    std::string where = file_;
    if (mark.line >= 0) where += ":" + std::to_string(mark.line + 1);
    throw ConfigError(where + ": " + message);
  }

  void require_map(const YAML::Node& node, const std::string& section) const {
    if (!node.IsMap()) fail(node, "'" + section + "' must be a mapping");
  }

  void reject_unknown(const YAML::Node& node, const std::string& section, const std::set<std::string>& allowed) const {
    std::set<std::string> seen;
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in " + section);
      if (!seen.insert(key).second) fail(kv.first, "duplicate key '" + key + "' in " + section);
    }
  }

  template <typename T>
  void read(const YAML::Node& map, const std::string& key, T& dst) const {
    const YAML::Node n = map[key];
    if (!n) return;
    try {
      dst = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, "key '" + key + "' has an invalid value");
    }
  }

  std::vector<std::string> read_paths(const YAML::Node& map, const std::string& key, const fs::path& base) const {
    const YAML::Node n = map[key];
    if (!n) return {};
    if (!n.IsSequence()) fail(n, "key '" + key + "' must be a list of paths");
    std::vector<std::string> out;
    for (const auto& item : n) {
      fs::path p = item.as<std::string>();
      if (p.is_relative()) p = base / p;
      std::error_code ec;
      const bool exists = fs::exists(p, ec) || fs::exists(raw_stem(p.string()) + ".json", ec);
      if (!exists) fail(item, "path '" + p.string() + "' does not exist");
      out.push_back(p.string());
    }
    return out;
  }

 private:
  std::string file_;
};

void validate_section(const ConfigReader& r, const YAML::Node& node, const std::function<void()>& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    r.fail(node, e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared helpers

NetConfig net_config_from_flags(const std::string& arch, int depth, int channels, const std::string& block,
                                double ratio, int head_taps, int scale) {
  NetConfig cfg;
  cfg.depth = depth;
  cfg.channels = channels;
  cfg.kind = parse_block_kind(block);
  cfg.ratio = ratio;
  cfg.head_taps = head_taps;
  cfg.scale = scale;
  if (arch == "parallelnet") {
    if (cfg.kind != BlockKind::Standard) {
      throw std::invalid_argument("--arch parallelnet uses standard blocks only; got --block " + block);
    }
  } else if (arch != "volumenet") {
    throw std::invalid_argument("unknown --arch '" + arch + "' (expected parallelnet or volumenet)");
  }
  cfg.validate();
  return cfg;
}

NetConfig standard_of(NetConfig cfg) {
  cfg.kind = BlockKind::Standard;
  return cfg;
}

std::string fixed(double v, int decimals) { return format_metric(v, decimals); }

int tile_margin(const Network<float>& net) {
  const Dims r = receptive_radius(net);
  return *std::max_element(r.begin(), r.end());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_phantom(const std::string& out_path, const std::vector<int>& dims, int blobs, std::uint64_t seed,
                std::ostream& out) {
  if (dims.size() != 3) throw std::invalid_argument("--dims needs three extents");
  const VolumeF vol = make_phantom(Dims{dims[0], dims[1], dims[2]}, blobs, seed);
  const VolumeFile f = write_volume(vol, out_path);
  out << "wrote " << f.path << " " << to_string(vol.dims()) << "\n";
  return kOk;
}

// Reads a volume, optionally clamped to [lo, hi] and mapped to [0, 255].
VolumeF read_clamped(const std::string& path, const std::vector<double>& clamp) {
  VolumeF vol = read_volume(path);
  if (clamp.empty()) return vol;
  if (clamp.size() != 2) throw std::invalid_argument("--clamp needs LO,HI");
  PreprocessSpec p;
  p.hu_clamp = std::make_pair(clamp[0], clamp[1]);
  return preprocess(vol, p);
}

int cmd_degrade(const std::string& in_path, const std::string& out_path, int scale,
                const std::vector<double>& clamp, std::ostream& out) {
  if (scale != 2) throw std::invalid_argument("--scale: only 2 is supported");
  const VolumeF vol = read_clamped(in_path, clamp);
  for (int d : vol.dims()) {
    if (d % scale != 0) {
      throw ShapeError("degrade: dims " + to_string(vol.dims()) + " are not divisible by " + std::to_string(scale));
    }
  }
  const VolumeF lr = tricubic_resample(vol, ResampleFactor{1, scale});
  const VolumeFile f = write_volume(lr, out_path);
  out << "wrote " << f.path << " " << to_string(lr.dims()) << "\n";
  return kOk;
}

int cmd_upsample(const std::string& in_path, const std::string& out_path, int scale, std::ostream& out) {
  if (scale != 2) throw std::invalid_argument("--scale: only 2 is supported");
  const VolumeF hr = tricubic_resample(read_volume(in_path), ResampleFactor{scale, 1});
  const VolumeFile f = write_volume(hr, out_path);
  out << "wrote " << f.path << " " << to_string(hr.dims()) << "\n";
  return kOk;
}

int cmd_params(const NetConfig& cfg, bool json, std::ostream& out) {
  const ParamReport rep = param_count_network(cfg);
  const ParamReport standard = param_count_network(standard_of(cfg));
  const double ratio = static_cast<double>(standard.total) / static_cast<double>(rep.total);
  if (json) {
    nlohmann::json j;
    j["network"] = network_name(cfg);
    j["config"] = config_to_json(cfg);
    for (const auto& s : rep.breakdown) j["stages"][s.name] = s.params;
    j["total"] = rep.total;
    j["standard_total"] = standard.total;
    j["compression_ratio"] = ratio;
    out << j.dump(2) << "\n";
    return kOk;
  }
  out << network_name(cfg) << "\n";
  out << std::left << std::setw(14) << "stage" << std::right << std::setw(12) << "params" << "\n";
  for (const auto& s : rep.breakdown) out << std::left << std::setw(14) << s.name << std::right << std::setw(12) << s.params << "\n";
  out << std::left << std::setw(14) << "total" << std::right << std::setw(12) << rep.total << "\n";
  out << std::left << std::setw(14) << "standard" << std::right << std::setw(12) << standard.total << "\n";
  out << std::left << std::setw(14) << "ratio" << std::right << std::setw(12) << fixed(ratio, 4) << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& resume_path, std::ostream& out) {
  RunConfig cfg = load_run_config(config_path);
  cfg.train.workers = worker_count_from_env();
  const auto [train_set, val_set] = load_datasets(cfg);
  fs::create_directories(cfg.output_dir);

  TrainSession session;
  if (!resume_path.empty()) {
    session = load_session(resume_path);
    if (!(session.net.config == cfg.net)) {
      throw std::invalid_argument("--resume: session network does not match the config's network section");
    }
    out << "resuming at epoch " << session.epoch << "\n";
  } else {
    session = start_session(build_network<float>(cfg.net, cfg.init_seed));
  }
  const fs::path dir(cfg.output_dir);
  out << network_name(cfg.net) << ", " << param_count_network(session.net).total << " parameters\n";
  train(session, train_set, val_set, cfg.train, [&](const TrainSession& s) {
    const EpochRecord& r = s.history.back();
    out << "epoch " << r.epoch << "  train_l1 " << fixed(r.train_l1, 4) << "  val_l1 " << fixed(r.val_l1, 4)
        << "  best " << fixed(r.best_val, 4) << "  " << fixed(r.seconds, 1) << "s\n";
    out.flush();
    save_network((dir / "best.vnn").string(), s.best);
    save_session((dir / "session.vns").string(), s);
    write_text((dir / "history.csv").string(), history_csv(s.history));
  });
  out << "best val_l1 " << fixed(session.best_val, 4) << "; checkpoint " << (dir / "best.vnn").string() << "\n";
  return kOk;
}

int cmd_infer(const std::string& ckpt, const std::string& in_path, const std::string& out_path, int tile,
              std::optional<int> margin, std::ostream& out) {
  const Network<float> net = load_network(ckpt);
  const VolumeF lr = read_volume(in_path);
  const auto t0 = std::chrono::steady_clock::now();
  VolumeF sr;
  if (tile > 0) {
    sr = forward_tiled(net, lr, tile, margin.value_or(tile_margin(net)), worker_count_from_env());
  } else {
    sr = forward(net, lr);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const VolumeFile f = write_volume(sr, out_path);
  out << "wrote " << f.path << " " << to_string(sr.dims()) << " in " << fixed(seconds, 3) << "s\n";
  return kOk;
}

int cmd_metrics(const std::string& sr_path, const std::string& gnd_path, const std::string& prefix,
                const std::string& ckpt, const std::vector<double>& clamp, std::ostream& out) {
  const VolumeF sr = read_volume(sr_path);
  const VolumeF gnd = read_clamped(gnd_path, clamp);
  if (!sr.same_shape(gnd)) {
    throw ShapeError("metrics: SR dims " + to_string(sr.dims()) + " differ from GND dims " + to_string(gnd.dims()));
  }
  MetricReport rep = evaluate(sr, gnd);
  if (!ckpt.empty()) rep.parameters = param_count_network(load_network(ckpt)).total;
  const std::string stem = prefix.empty() ? raw_stem(sr_path) + "_metrics" : prefix;
  write_text(stem + ".csv", to_csv(rep));
  write_text(stem + ".json", to_json(rep));
  out << to_csv(rep);
  return kOk;
}

int cmd_sweep(const std::vector<int>& depths, const std::vector<int>& channels, const std::vector<std::string>& blocks,
              const std::vector<double>& ratios, int head_taps, const std::string& config_path,
              const std::string& csv_path, std::ostream& out) {
  if (depths.empty() || channels.empty() || blocks.empty() || ratios.empty()) {
    throw std::invalid_argument("sweep: empty grid");
  }
  std::optional<RunConfig> run_cfg;
  std::vector<VolumePair> train_set, val_set;
  if (!config_path.empty()) {
    run_cfg = load_run_config(config_path);
    run_cfg->train.workers = worker_count_from_env();
    std::tie(train_set, val_set) = load_datasets(*run_cfg);
  }
  // Timing probe: one fixed LR volume per sweep.
  VolumeF probe(1, Dims{16, 16, 16});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> unit(0.0f, 255.0f);
  for (float& v : probe.flat()) v = unit(rng);

  std::ostringstream csv;
  csv << "network,depth,channels,block,ratio,params,standard_params,compression_ratio,psnr,seconds\n";
  for (int d : depths) {
    for (int c : channels) {
      for (const auto& b : blocks) {
        for (double r : ratios) {
          NetConfig cfg = net_config_from_flags("volumenet", d, c, b, r, head_taps, 2);
          const std::int64_t params = param_count_network(cfg).total;
          const std::int64_t standard = param_count_network(standard_of(cfg)).total;
          std::string psnr_cell;
          Network<float> net = build_network<float>(cfg, run_cfg ? run_cfg->init_seed : 7);
          if (run_cfg) {
            TrainSession s = start_session(std::move(net));
            train(s, train_set, val_set, run_cfg->train);
            double acc = 0.0;
            for (const auto& p : val_set) {
              acc += psnr(forward_tiled(s.best, p.lr, run_cfg->train.val_tile, tile_margin(s.best), 1), p.hr);
            }
            psnr_cell = fixed(acc / static_cast<double>(val_set.size()), 2);
            net = std::move(s.best);
          }
          const auto t0 = std::chrono::steady_clock::now();
          (void)forward(net, probe);
          const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          std::ostringstream ratio_text;
          ratio_text << r;
          csv << '"' << network_name(cfg) << "\"," << d << ',' << c << ',' << to_string(cfg.kind) << ','
              << ratio_text.str() << ',' << params << ',' << standard << ','
              << fixed(static_cast<double>(standard) / static_cast<double>(params), 4) << ',' << psnr_cell << ','
              << fixed(seconds, 4) << '\n';
        }
      }
    }
  }
  if (!csv_path.empty()) write_text(csv_path, csv.str());
  out << csv.str();
  return kOk;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) {
    std::istringstream in(item);
    T v{};
    if (!(in >> v) || !in.eof()) throw std::invalid_argument(std::string(flag) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  ConfigReader r(path);
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw IoError("cannot open config '" + path + "'");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError(path + ": top level must be a mapping");
  r.reject_unknown(root, "top level", {"network", "training", "data", "output"});
  const fs::path base = fs::path(path).parent_path();
  RunConfig cfg;

  if (const YAML::Node n = root["network"]) {
    r.require_map(n, "network");
    r.reject_unknown(n, "network", {"arch", "depth", "channels", "scale", "block", "ratio", "head_taps",
                                    "global_residual", "seed"});
    std::string arch = "volumenet", block = "queue";
    int depth = cfg.net.depth, channels = cfg.net.channels, scale = cfg.net.scale, head_taps = cfg.net.head_taps;
    double ratio = cfg.net.ratio;
    r.read(n, "arch", arch);
    r.read(n, "block", block);
    if (arch == "parallelnet" && !n["block"]) block = "standard";
    r.read(n, "depth", depth);
    r.read(n, "channels", channels);
    r.read(n, "scale", scale);
    r.read(n, "ratio", ratio);
    r.read(n, "head_taps", head_taps);
    r.read(n, "seed", cfg.init_seed);
    validate_section(r, n, [&] { cfg.net = net_config_from_flags(arch, depth, channels, block, ratio, head_taps, scale); });
    r.read(n, "global_residual", cfg.net.global_residual);
  } else {
    throw ConfigError(path + ": missing 'network' section");
  }

  if (const YAML::Node n = root["training"]) {
    r.require_map(n, "training");
    r.reject_unknown(n, "training", {"learning_rate", "batch_size", "patch_size", "patience", "batches_per_epoch",
                                     "max_epochs", "seed", "beta1", "beta2", "epsilon", "val_tile", "max_seconds",
                                     "lr_decay", "lr_decay_every"});
    TrainConfig& t = cfg.train;
    r.read(n, "learning_rate", t.learning_rate);
    r.read(n, "batch_size", t.batch_size);
    r.read(n, "patch_size", t.patch_size);
    r.read(n, "patience", t.patience);
    r.read(n, "batches_per_epoch", t.batches_per_epoch);
    r.read(n, "max_epochs", t.max_epochs);
    r.read(n, "seed", t.seed);
    r.read(n, "beta1", t.beta1);
    r.read(n, "beta2", t.beta2);
    r.read(n, "epsilon", t.epsilon);
    r.read(n, "val_tile", t.val_tile);
    r.read(n, "max_seconds", t.max_seconds);
    r.read(n, "lr_decay", t.lr_decay);
    r.read(n, "lr_decay_every", t.lr_decay_every);
    validate_section(r, n, [&] { t.validate(); });
  }

  const YAML::Node data = root["data"];
  if (!data) throw ConfigError(path + ": missing 'data' section");
  r.require_map(data, "data");
  r.reject_unknown(data, "data", {"train", "validation", "preprocess"});
  cfg.train_paths = r.read_paths(data, "train", base);
  cfg.validation_paths = r.read_paths(data, "validation", base);
  if (cfg.train_paths.empty()) r.fail(data, "data.train must list at least one volume");
  if (cfg.validation_paths.empty()) r.fail(data, "data.validation must list at least one volume");
  if (const YAML::Node p = data["preprocess"]) {
    r.require_map(p, "data.preprocess");
    r.reject_unknown(p, "data.preprocess", {"clamp", "normalize"});
    PreprocessSpec spec;
    if (const YAML::Node c = p["clamp"]) {
      std::vector<double> lohi;
      r.read(p, "clamp", lohi);
      if (lohi.size() != 2 || !(lohi[0] < lohi[1])) r.fail(c, "clamp must be [lo, hi] with lo < hi");
      spec.hu_clamp = std::make_pair(lohi[0], lohi[1]);
    }
    r.read(p, "normalize", spec.normalize);
    cfg.preprocess = spec;
  }

  const YAML::Node output = root["output"];
  if (!output) throw ConfigError(path + ": missing 'output' directory");
  std::string out_dir;
  r.read(root, "output", out_dir);
  if (out_dir.empty()) r.fail(output, "output must name a directory");
  fs::path od(out_dir);
  if (od.is_relative()) od = base / od;
  cfg.output_dir = od.string();
  return cfg;
}

std::pair<std::vector<VolumePair>, std::vector<VolumePair>> load_datasets(const RunConfig& cfg) {
  auto load = [&](const std::vector<std::string>& paths) {
    std::vector<VolumePair> set;
    for (const auto& p : paths) {
      VolumeF hr = read_volume(p);
      if (cfg.preprocess) hr = preprocess(hr, *cfg.preprocess);
      set.push_back(make_pair_from_hr(hr, cfg.net.scale));
    }
    return set;
  };
  return {load(cfg.train_paths), load(cfg.validation_paths)};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"volnet: volumetric super-resolution"};
  app.require_subcommand(1);

  auto* phantom = app.add_subcommand("phantom", "Write a synthetic phantom volume");
  std::string ph_out;
  std::vector<int> ph_dims{64, 64, 64};
  int ph_blobs = 40;
  std::uint64_t ph_seed = 1;
  phantom->add_option("output", ph_out, "Output raw volume path")->required();
  phantom->add_option("--dims", ph_dims, "X Y Z extents")->expected(3);
  phantom->add_option("--blobs", ph_blobs, "Number of Gaussian blobs");
  phantom->add_option("--seed", ph_seed, "RNG seed");

  auto* degrade = app.add_subcommand("degrade", "Tricubic downsampling of an HR volume");
  std::string dg_in, dg_out;
  int dg_scale = 2;
  std::vector<double> dg_clamp;
  degrade->add_option("input", dg_in, "HR volume (.nii or raw)")->required();
  degrade->add_option("output", dg_out, "LR raw volume")->required();
  degrade->add_option("--scale", dg_scale, "Downsampling factor");
  degrade->add_option("--clamp", dg_clamp, "Clamp to LO HI then map to [0,255]")->expected(2);

  auto* upsample = app.add_subcommand("upsample", "Tricubic upsampling (the interpolation baseline)");
  std::string up_in, up_out;
  int up_scale = 2;
  upsample->add_option("input", up_in, "LR volume")->required();
  upsample->add_option("output", up_out, "Upsampled raw volume")->required();
  upsample->add_option("--scale", up_scale, "Upsampling factor");

  auto* params = app.add_subcommand("params", "Per-stage parameter counts");
  std::string pa_arch = "volumenet", pa_block = "standard";
  int pa_depth = 5, pa_channels = 32, pa_head_taps = 3, pa_scale = 2;
  double pa_ratio = 0.5;
  bool pa_json = false;
  params->add_option("--arch", pa_arch, "parallelnet | volumenet");
  params->add_option("--depth", pa_depth, "D");
  params->add_option("--channels", pa_channels, "C");
  params->add_option("--block", pa_block, "Block kind");
  params->add_option("--ratio", pa_ratio, "Bottleneck ratio");
  params->add_option("--head-taps", pa_head_taps, "Aggregation head extent (1 or 3)");
  params->add_option("--scale", pa_scale, "Upscaling factor");
  params->add_flag("--json", pa_json, "Emit JSON");

  auto* trainc = app.add_subcommand("train", "Train from a YAML run configuration");
  std::string tr_config, tr_resume;
  trainc->add_option("config", tr_config, "Run configuration")->required();
  trainc->add_option("--resume", tr_resume, "Session file to continue from");

  auto* infer = app.add_subcommand("infer", "Super-resolve a volume");
  std::string in_ckpt, in_in, in_out;
  int in_tile = 0;
  std::optional<int> in_margin;
  infer->add_option("checkpoint", in_ckpt, "Network checkpoint")->required();
  infer->add_option("input", in_in, "LR volume")->required();
  infer->add_option("output", in_out, "SR raw volume")->required();
  infer->add_option("--tile", in_tile, "Tile edge in LR voxels (0: whole volume)");
  infer->add_option("--margin", in_margin, "Context voxels per tile side (default: receptive radius)");

  auto* metrics = app.add_subcommand("metrics", "RMSE/PSNR/SSIM report");
  std::string me_sr, me_gnd, me_prefix, me_ckpt;
  metrics->add_option("sr", me_sr, "Reconstructed volume")->required();
  metrics->add_option("gnd", me_gnd, "Ground truth volume")->required();
  metrics->add_option("--out", me_prefix, "Report path prefix (writes .csv and .json)");
  metrics->add_option("--checkpoint", me_ckpt, "Fill the parameter count from a checkpoint");
  std::vector<double> me_clamp;
  metrics->add_option("--clamp", me_clamp, "Clamp the GND to LO HI then map to [0,255]")->expected(2);

  auto* sweep = app.add_subcommand("sweep", "Parameter/time grid over configurations");
  std::string sw_depths = "5", sw_channels = "32", sw_blocks = "queue", sw_ratios = "0.5", sw_config, sw_out;
  int sw_head_taps = 3;
  sweep->add_option("--depths", sw_depths, "Comma-separated depths");
  sweep->add_option("--channels", sw_channels, "Comma-separated channel counts");
  sweep->add_option("--blocks", sw_blocks, "Comma-separated block kinds");
  sweep->add_option("--ratios", sw_ratios, "Comma-separated bottleneck ratios");
  sweep->add_option("--head-taps", sw_head_taps, "Aggregation head extent (1 or 3)");
  sweep->add_option("--config", sw_config, "Run configuration; when given each cell is trained");
  sweep->add_option("--out", sw_out, "CSV output path");

  std::vector<std::string> argv_store{"volnet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*phantom) return cmd_phantom(ph_out, ph_dims, ph_blobs, ph_seed, out);
    if (*degrade) return cmd_degrade(dg_in, dg_out, dg_scale, dg_clamp, out);
    if (*upsample) return cmd_upsample(up_in, up_out, up_scale, out);
    if (*params) {
      return cmd_params(net_config_from_flags(pa_arch, pa_depth, pa_channels, pa_block, pa_ratio, pa_head_taps, pa_scale),
                        pa_json, out);
    }
    if (*trainc) return cmd_train(tr_config, tr_resume, out);
    if (*infer) return cmd_infer(in_ckpt, in_in, in_out, in_tile, in_margin, out);
    if (*metrics) return cmd_metrics(me_sr, me_gnd, me_prefix, me_ckpt, me_clamp, out);
    if (*sweep) {
      return cmd_sweep(parse_list<int>(sw_depths, "--depths"), parse_list<int>(sw_channels, "--channels"),
                       split_list(sw_blocks), parse_list<double>(sw_ratios, "--ratios"), sw_head_taps, sw_config,
                       sw_out, out);
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kValidation;
}

}  // namespace volnet::cli
