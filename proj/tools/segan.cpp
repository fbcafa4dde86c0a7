// Command-line front end: synthetic data, training, evaluation, prediction,
// gradient checks and the variant ablation.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "segan/config.hpp"
#include "segan/gradcheck.hpp"
#include "segan/training.hpp"

namespace {

using namespace segan;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int fail(Exit code, const std::string& message) {
  static const char* names[] = {"ok", "usage", "data", "numeric"};
  std::string line = message;
  for (char& c : line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "segan: error=" << names[code] << " " << line << '\n';
  return code;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.train.validate();
  cfg.synth.validate();
  return cfg;
}

void print_record(const HistoryRecord& r, std::size_t every) {
  if (r.dice.empty() && r.iter % every != 0) return;
  std::ostringstream line;
  line << "iter " << r.iter << "  loss_s " << r.loss_s;
  if (r.loss_c) line << "  loss_c " << *r.loss_c;
  if (r.max_abs_critic_w) line << "  max|w_c| " << *r.max_abs_critic_w;
  if (!r.dice.empty()) {
    line << "  dice";
    for (double d : r.dice) line << ' ' << d;
  }
  std::cout << line.str() << std::endl;
}

int run(int argc, char** argv) {
  CLI::App app{"Adversarial segmentation with a multi-scale L1 critic loss"};
  app.require_subcommand(0, 1);
  bool print_defaults_flag = false;
  app.add_flag("--print-defaults", print_defaults_flag, "Print every config key with its defaults");

  std::string spec_path, config_path, data_dir, out_dir, checkpoint, volume_path, out_file, split = "val",
                                                                                     csv_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> variant_names;
  double tol = 1e-4;
  std::size_t log_every = 50;

  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic nested-region dataset");
  gen->add_option("--spec", spec_path, "Config file with synth.* keys");
  gen->add_option("--set", overrides, "Override a config key (key=value)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one variant");
  tr->add_option("--config", config_path, "Config file");
  tr->add_option("--data", data_dir, "Dataset directory or manifest")->required();
  tr->add_option("--out", out_dir, "Output directory")->required();
  tr->add_option("--seed", seed, "Override the config seed");
  tr->add_option("--set", overrides, "Override a config key (key=value)");
  tr->add_option("--log-every", log_every, "Progress line interval");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory or manifest")->required();
  ev->add_option("--split", split, "val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--csv", csv_path, "Write the CSV report here and print a table instead");

  auto* pr = app.add_subcommand("predict", "Segment one image volume");
  pr->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pr->add_option("--volume", volume_path, "Input SEGV image volume")->required();
  pr->add_option("--out", out_file, "Output SEGV label volume")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--tol", tol, "Maximum relative error");

  auto* ab = app.add_subcommand("ablate", "Train every variant over several seeds and compare");
  ab->add_option("--config", config_path, "Config file");
  ab->add_option("--data", data_dir, "Dataset directory or manifest")->required();
  ab->add_option("--out", out_dir, "Output directory")->required();
  ab->add_option("--seeds", seeds, "Seeds")->delimiter(',');
  ab->add_option("--variants", variant_names, "Variants (default: all)")->delimiter(',');
  ab->add_option("--set", overrides, "Override a config key (key=value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, e.what());
  }

  if (print_defaults_flag) {
    print_defaults(std::cout);
    return kOk;
  }

  if (*gen) {
    RunConfig cfg = load_run_config(spec_path, overrides);
    DatasetHandle h = gen_synthetic(cfg.synth, out_dir);
    std::cout << "wrote " << h.entries.size() << " volume pairs, manifest " << h.manifest.string() << '\n';
    return kOk;
  }

  if (*tr) {
    RunConfig cfg = load_run_config(config_path, overrides);
    if (seed) cfg.train.seed = *seed;
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream resolved(std::filesystem::path(out_dir) / "config.txt");
      write_config(resolved, cfg);
    }
    TrainResult r = train(cfg.train, DatasetHandle::open(data_dir), out_dir,
                          [&](const HistoryRecord& rec) { print_record(rec, log_every); });
    if (r.best_mean_dice >= 0) {
      std::cout << "best mean dice " << r.best_mean_dice << " at iter " << r.best_iter << '\n';
    }
    return kOk;
  }

  if (*ev) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    DatasetHandle h = DatasetHandle::open(data_dir);
    h.volume_crop = ckpt.config.volume_crop;
    SliceDataset ds = SliceDataset::load(h, parse_split(split));
    if (ds.size() == 0) throw DataError("split '" + split + "' is empty");
    MetricsReport report = evaluate_split(ckpt.nets, ds, ckpt.config.crop, ckpt.config.threshold);
    if (csv_path.empty()) {
      report.write_csv(std::cout);
    } else {
      std::ofstream out(csv_path);
      if (!out) throw DataError("cannot write " + csv_path);
      report.write_csv(out);
      report.print_table(std::cout);
    }
    return kOk;
  }

  if (*pr) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    Volume labels = predict_volume(ckpt.nets, load_volume(volume_path), ckpt.config.threshold);
    save_volume(labels, out_file);
    return kOk;
  }

  if (*gc) {
    bool ok = true;
    for (const GradCheckResult& r : run_gradient_suite(7, tol)) {
      std::printf("%-32s %.3e %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "ok" : "FAIL");
      ok = ok && r.passed;
    }
    return ok ? kOk : fail(kNumeric, "gradient check exceeded tolerance " + std::to_string(tol));
  }

  if (*ab) {
    RunConfig cfg = load_run_config(config_path, overrides);
    std::vector<Variant> variants;
    for (const auto& name : variant_names) variants.push_back(parse_variant(name));
    if (variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
    std::filesystem::create_directories(out_dir);
    std::vector<AblationRow> rows;
    for (Variant v : variants) {
      for (std::uint64_t s : seeds) {
        std::cout << "training " << to_string(v) << " seed " << s << std::flush;
        auto part = run_ablation(cfg.train, DatasetHandle::open(data_dir), {v}, {s});
        std::cout << "  mean dice " << part.at(0).mean_dice << std::endl;
        rows.insert(rows.end(), part.begin(), part.end());
      }
    }
    std::ofstream csv(std::filesystem::path(out_dir) / "ablation.csv");
    write_ablation_csv(csv, rows, cfg.train.classes);
    std::ofstream table(std::filesystem::path(out_dir) / "ablation.txt");
    print_ablation_table(table, rows, cfg.train.classes);
    print_ablation_table(std::cout, rows, cfg.train.classes);
    return kOk;
  }

  std::cout << app.help();
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    return fail(kUsage, e.what());
  } catch (const NumericError& e) {
    return fail(kNumeric, e.what());
  } catch (const DataError& e) {
    return fail(kData, e.what());
  } catch (const ShapeError& e) {
    return fail(kData, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(kData, e.what());
  } catch (const std::exception& e) {
    return fail(kData, e.what());
  }
}
