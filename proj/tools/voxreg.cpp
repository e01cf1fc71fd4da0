// voxreg: unsupervised 3D deformable registration at desk scale.
// Subcommands: synth, train, register, evaluate, gradcheck, params.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "voxreg/voxreg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Opts {
  // shared knobs (defaults < config file < flags)
  double alpha = 1.0;
  double lr = 1e-4;
  int epochs = 1;
  int batch = 1;
  uint64_t seed = 0;
  std::string dilations = "1,2,4";
  int base_channels = 16;
  int levels = 4;
  int window = 4;
  int threads = 0;  // 0 = auto
  std::string merge_mode = "concat";
  bool normalize = false;
  int64_t checkpoint_interval = 0;
  std::string pair_mode = "random-pair";

  // synth
  std::string out_dir = "data";
  int count = 1;
  int dims = 48;
  int blobs = 12;
  double amplitude = 3.0;
  double smoothness = 8.0;

  // paths
  std::string data_dir;
  std::string checkpoint = "checkpoint.vxrg";
  std::string loss_log = "loss.csv";
  std::string fixed_path, moving_path, field_path;
  std::string fixed_labels, moving_labels;
  std::string out_field = "field", out_warped = "warped";
  std::string out_json, out_csv, per_label_csv;
  int gradcheck_seeds = 3;
};

std::vector<int> parse_dilations(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw std::invalid_argument("--dilations: no rates given");
  return out;
}

voxreg::ArchConfig arch_from_opts(const Opts& o) {
  voxreg::ArchConfig cfg;
  cfg.levels = o.levels;
  cfg.base_channels = o.base_channels;
  cfg.dilation_rates = parse_dilations(o.dilations);
  cfg.merge_mode = o.merge_mode;
  cfg.validate();
  return cfg;
}

voxreg::TrainConfig train_from_opts(const Opts& o) {
  voxreg::TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.epochs = o.epochs;
  cfg.batch = o.batch;
  cfg.seed = o.seed;
  cfg.loss.alpha = o.alpha;
  cfg.loss.window_radius = o.window;
  cfg.checkpoint_interval = o.checkpoint_interval;
  cfg.pair_mode = o.pair_mode;
  cfg.validate();
  return cfg;
}

json resolved_config(const Opts& o) {
  return json{{"alpha", o.alpha},
              {"lr", o.lr},
              {"epochs", o.epochs},
              {"batch", o.batch},
              {"seed", o.seed},
              {"dilations", o.dilations},
              {"base_channels", o.base_channels},
              {"levels", o.levels},
              {"window", o.window},
              {"threads", voxreg::thread_count()},
              {"merge_mode", o.merge_mode},
              {"normalize", o.normalize},
              {"pair_mode", o.pair_mode}};
}

void apply_config_file(Opts& o, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw voxreg::DataError("cannot read config file: " + path);
  json j;
  is >> j;
  o.alpha = j.value("alpha", o.alpha);
  o.lr = j.value("lr", o.lr);
  o.epochs = j.value("epochs", o.epochs);
  o.batch = j.value("batch", o.batch);
  o.seed = j.value("seed", o.seed);
  o.dilations = j.value("dilations", o.dilations);
  o.base_channels = j.value("base_channels", o.base_channels);
  o.levels = j.value("levels", o.levels);
  o.window = j.value("window", o.window);
  o.threads = j.value("threads", o.threads);
  o.merge_mode = j.value("merge_mode", o.merge_mode);
  o.normalize = j.value("normalize", o.normalize);
  o.pair_mode = j.value("pair_mode", o.pair_mode);
}

void resolve_threads(const Opts& o) {
  int n = o.threads;
  if (n <= 0) {
    if (const char* env = std::getenv("VOXREG_THREADS")) n = std::atoi(env);
  }
  if (n > 0) voxreg::thread_count() = n;
}

int cmd_synth(const Opts& o) {
  voxreg::SynthSpec spec;
  spec.dims = {o.dims, o.dims, o.dims};
  spec.blobs = o.blobs;
  spec.amplitude = o.amplitude;
  spec.smoothness = o.smoothness;
  spec.validate();
  fs::create_directories(o.out_dir);
  for (int i = 0; i < o.count; ++i) {
    spec.seed = o.seed + static_cast<uint64_t>(i);
    voxreg::SynthPair pair = voxreg::make_pair(spec);
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "pair%03d_", i);
    const std::string base = (fs::path(o.out_dir) / prefix).string();
    voxreg::save_volume(pair.fixed, base + "fixed");
    voxreg::save_volume(pair.moving, base + "moving");
    voxreg::save_field(pair.u_true, base + "field");
    voxreg::save_labels(pair.labels_fixed, base + "labels_fixed");
    voxreg::save_labels(pair.labels_moving, base + "labels_moving");
    const auto stats = voxreg::displacement_stats(pair.u_true);
    const double fnj = voxreg::jacobian_fnj(pair.u_true).fnj;
    std::cout << prefix << "dims=" << o.dims << "^3 mean|u|=(" << stats[0] << "," << stats[1]
              << "," << stats[2] << ") fnj=" << fnj << "\n";
  }
  return 0;
}

std::vector<voxreg::Pair> load_dataset(const std::string& dir, bool normalize) {
  std::vector<std::string> bases;
  if (!fs::is_directory(dir)) throw voxreg::DataError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.find("labels") != std::string::npos) continue;
    const auto pos = name.find("fixed.json");
    if (pos != std::string::npos) bases.push_back((e.path().parent_path() /
                                                   name.substr(0, pos)).string());
  }
  std::sort(bases.begin(), bases.end());
  std::vector<voxreg::Pair> pairs;
  voxreg::LoadOptions lo{normalize};
  for (const auto& b : bases)
    pairs.emplace_back(voxreg::load_volume(b + "fixed", lo), voxreg::load_volume(b + "moving", lo));
  if (pairs.empty()) throw voxreg::DataError("no pairs (*fixed.json / *moving.json) in " + dir);
  return pairs;
}

int cmd_train(const Opts& o) {
  auto pairs = load_dataset(o.data_dir, o.normalize);
  auto arch = arch_from_opts(o);
  auto tc = train_from_opts(o);
  std::cerr << "training on " << pairs.size() << " pairs\n";
  voxreg::TrainResult r = voxreg::train(pairs, tc, arch, o.checkpoint);
  voxreg::CheckpointExtra extra;
  extra.run_config = resolved_config(o);
  voxreg::save_checkpoint(o.checkpoint, r.params, &extra);
  std::ofstream log(o.loss_log);
  if (!log) throw voxreg::DataError("cannot write loss log: " + o.loss_log);
  log << voxreg::log_to_csv(r.log);
  std::cout << "steps=" << r.params.step << " final_loss=" << r.log.back().total
            << " checkpoint=" << o.checkpoint << " log=" << o.loss_log << "\n";
  return 0;
}

int cmd_register(const Opts& o) {
  voxreg::NetworkParams params = voxreg::load_checkpoint(o.checkpoint);
  voxreg::LoadOptions lo{o.normalize};
  voxreg::Volume f = voxreg::load_volume(o.fixed_path, lo);
  voxreg::Volume m = voxreg::load_volume(o.moving_path, lo);
  const auto t0 = std::chrono::steady_clock::now();
  voxreg::RegisterResult r = voxreg::register_pair(params, f, m);
  const auto t1 = std::chrono::steady_clock::now();
  voxreg::save_field(r.field, o.out_field);
  voxreg::save_volume(r.warped, o.out_warped);
  const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::cout << "inference_ms=" << ms << " field=" << o.out_field << " warped=" << o.out_warped
            << "\n";
  return 0;
}

int cmd_evaluate(const Opts& o) {
  voxreg::DisplacementField field;
  voxreg::Volume f, m;
  bool have_pair = false;
  voxreg::LoadOptions lo{o.normalize};
  if (!o.fixed_path.empty() && !o.moving_path.empty()) {
    f = voxreg::load_volume(o.fixed_path, lo);
    m = voxreg::load_volume(o.moving_path, lo);
    have_pair = true;
  }
  if (!o.field_path.empty()) {
    field = voxreg::load_field(o.field_path);
  } else {
    if (!have_pair)
      throw voxreg::DataError("evaluate: need --field, or --checkpoint with --fixed and --moving");
    voxreg::NetworkParams params = voxreg::load_checkpoint(o.checkpoint);
    field = voxreg::network_predict(params, f, m);
  }
  voxreg::MetricsReport report;
  report.voxels = field.dims.numel();
  report.mean_abs_u = voxreg::displacement_stats(field);
  report.fnj = voxreg::jacobian_fnj(field).fnj;
  if (!o.fixed_labels.empty() && !o.moving_labels.empty()) {
    voxreg::LabelVolume lf = voxreg::load_labels(o.fixed_labels);
    voxreg::LabelVolume lm = voxreg::load_labels(o.moving_labels);
    voxreg::LabelVolume warped = voxreg::warp_nearest(lm, field);
    report.dice = voxreg::dice(lf, warped, voxreg::labels_present(lf, warped));
  }
  if (have_pair) {
    voxreg::LossConfig lc;
    lc.alpha = o.alpha;
    lc.window_radius = o.window;
    voxreg::Volume warped = voxreg::warp_trilinear(m, field);
    report.lncc_term = -voxreg::lncc_value(f, warped, lc) / static_cast<double>(f.dims.numel());
    report.reg_term = lc.alpha * voxreg::sobolev_value(field) /
                      static_cast<double>(f.dims.numel());
  }
  std::cout << report.to_json().dump(2) << "\n";
  if (!o.out_json.empty()) std::ofstream(o.out_json) << report.to_json().dump(2) << "\n";
  if (!o.out_csv.empty()) std::ofstream(o.out_csv) << report.to_csv_row();
  if (!o.per_label_csv.empty()) std::ofstream(o.per_label_csv) << report.per_label_csv();
  return 0;
}

int cmd_gradcheck(const Opts& o) {
  bool all_pass = true;
  for (int s = 0; s < o.gradcheck_seeds; ++s) {
    const uint64_t seed = o.seed + static_cast<uint64_t>(s);
    for (const auto& c : voxreg::run_gradcheck_suite(seed)) {
      std::cout << (c.result.pass ? "PASS" : "FAIL") << " seed=" << seed << " " << c.name
                << " max_rel_err=" << c.result.max_rel_err << "\n";
      all_pass = all_pass && c.result.pass;
    }
  }
  if (!all_pass) {
    std::cerr << "gradcheck: failures detected\n";
    return 3;
  }
  return 0;
}

int cmd_params(const Opts& o) {
  auto arch = arch_from_opts(o);
  voxreg::NetworkParams p = voxreg::build_network(arch, o.seed);
  std::cout << p.param_count() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Opts o;
  CLI::App app{"voxreg: unsupervised 3D deformable image registration"};
  app.require_subcommand(1);

  // config file is applied before flag parsing: defaults < config < flags
  std::string config_path;
  for (int i = 1; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];

  try {
    if (!config_path.empty()) apply_config_file(o, config_path);
  } catch (const voxreg::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  app.add_option("--config", config_path, "JSON config file (applied before flags)");
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "RNG seed");
    sub->add_option("--threads", o.threads, "worker thread cap (env VOXREG_THREADS as fallback)");
  };
  auto add_arch = [&](CLI::App* sub) {
    sub->add_option("--dilations", o.dilations, "comma-separated dilation rates, e.g. 1,2,4");
    sub->add_option("--base-channels", o.base_channels, "first-level channel count");
    sub->add_option("--levels", o.levels, "encoder depth");
    sub->add_option("--merge-mode", o.merge_mode, "dilated-branch merge: concat|sum");
  };
  auto add_loss = [&](CLI::App* sub) {
    sub->add_option("--alpha", o.alpha, "regularization weight");
    sub->add_option("--window", o.window, "LNCC window half-width");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic volume pairs");
  synth->add_option("--out", o.out_dir, "output directory");
  synth->add_option("--count", o.count, "number of pairs");
  synth->add_option("--dims", o.dims, "cubic volume side length");
  synth->add_option("--blobs", o.blobs, "number of intensity blobs");
  synth->add_option("--amplitude", o.amplitude, "mean displacement norm (voxels)");
  synth->add_option("--smoothness", o.smoothness, "deformation smoothness sigma (voxels)");
  add_common(synth);

  CLI::App* train = app.add_subcommand("train", "train a registration network");
  train->add_option("--data", o.data_dir, "dataset directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "output checkpoint path");
  train->add_option("--log", o.loss_log, "loss log CSV path");
  train->add_option("--epochs", o.epochs, "training epochs");
  train->add_option("--lr", o.lr, "Adam learning rate");
  train->add_option("--batch", o.batch, "pairs per optimizer step");
  train->add_option("--checkpoint-interval", o.checkpoint_interval, "steps between checkpoints");
  train->add_option("--pair-mode", o.pair_mode, "random-pair|fixed-atlas");
  train->add_flag("--normalize", o.normalize, "rescale intensities to [0,1] on load");
  add_common(train);
  add_arch(train);
  add_loss(train);

  CLI::App* reg = app.add_subcommand("register", "apply a trained network to a pair");
  reg->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  reg->add_option("--fixed", o.fixed_path, "fixed volume")->required();
  reg->add_option("--moving", o.moving_path, "moving volume")->required();
  reg->add_option("--out-field", o.out_field, "output displacement field base path");
  reg->add_option("--out-warped", o.out_warped, "output warped volume base path");
  reg->add_flag("--normalize", o.normalize, "rescale intensities to [0,1] on load");
  add_common(reg);

  CLI::App* eval = app.add_subcommand("evaluate", "Dice / FNJ / displacement report");
  eval->add_option("--field", o.field_path, "displacement field (skips network inference)");
  eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  eval->add_option("--fixed", o.fixed_path, "fixed volume");
  eval->add_option("--moving", o.moving_path, "moving volume");
  eval->add_option("--fixed-labels", o.fixed_labels, "fixed label volume");
  eval->add_option("--moving-labels", o.moving_labels, "moving label volume");
  eval->add_option("--out-json", o.out_json, "write report JSON here");
  eval->add_option("--out-csv", o.out_csv, "write one-row CSV here");
  eval->add_option("--per-label-csv", o.per_label_csv, "write per-structure Dice CSV here");
  eval->add_flag("--normalize", o.normalize, "rescale intensities to [0,1] on load");
  add_common(eval);
  add_loss(eval);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--seeds", o.gradcheck_seeds, "number of seeds to run");
  add_common(gc);

  CLI::App* params = app.add_subcommand("params", "print the model parameter count");
  add_common(params);
  add_arch(params);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    resolve_threads(o);
    std::cerr << "config: " << resolved_config(o).dump() << "\n";
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (reg->parsed()) return cmd_register(o);
    if (eval->parsed()) return cmd_evaluate(o);
    if (gc->parsed()) return cmd_gradcheck(o);
    if (params->parsed()) return cmd_params(o);
  } catch (const voxreg::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const voxreg::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
