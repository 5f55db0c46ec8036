#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <malloc.h>
#include <optional>
#include <sstream>

#include "paiconv/bench.hpp"
#include "paiconv/check.hpp"
#include "paiconv/fault.hpp"
#include "paiconv/lattice.hpp"
#include "paiconv/parallel.hpp"
#include "paiconv/train.hpp"

namespace paiconv::cli {
namespace {

namespace fs = std::filesystem;

// Bad flag values found after CLI11 has parsed; reported as usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataOptions {
  std::string data = "synthetic";
  std::vector<std::string> classes{"sphere", "cube", "torus"};
  std::size_t points = 256;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::string test_data;  // manifest only
};

struct ModelOptions {
  std::string variant = "full";
  std::vector<std::size_t> channels = ClassifierConfig::desk().conv_channels;
  std::size_t aggregate = ClassifierConfig::desk().aggregate_width;
  std::vector<std::size_t> hidden{ClassifierConfig::desk().fc_widths.front()};
  std::size_t neighbors = ClassifierConfig::desk().neighbors;
  std::size_t kernel_points = ClassifierConfig::desk().kernel_points;
  std::size_t position_width = ClassifierConfig::desk().position_width;
  double dropout = ClassifierConfig::desk().dropout;
  std::vector<std::size_t> downsample;
  std::string pooling{pooling_name(ClassifierConfig::desk().pooling)};
};

struct TrainOptions {
  TrainConfig config = TrainConfig::desk();
  bool no_augment = false;
};

void add_data_options(CLI::App* app, DataOptions& o) {
  app->add_option("--data", o.data, "'synthetic' or the path of a tab-separated manifest")
      ->capture_default_str();
  app->add_option("--classes", o.classes, "Synthetic shape classes")->capture_default_str();
  app->add_option("--points", o.points, "Points per cloud")->capture_default_str();
  app->add_option("--train-per-class", o.train_per_class, "Synthetic training clouds per class")
      ->capture_default_str();
  app->add_option("--test-per-class", o.test_per_class, "Synthetic test clouds per class")
      ->capture_default_str();
}

void add_model_options(CLI::App* app, ModelOptions& o) {
  std::string names;
  for (Variant v : kAllVariants) names += (names.empty() ? "" : ", ") + std::string(variant_name(v));
  app->add_option("--variant", o.variant, "Operator variant: " + names)->capture_default_str();
  app->add_option("--channels", o.channels, "Conv layer widths")->capture_default_str();
  app->add_option("--aggregate", o.aggregate, "Width of the shared layer before pooling")
      ->capture_default_str();
  app->add_option("--hidden", o.hidden, "Hidden fully connected widths (class count is appended)")
      ->capture_default_str();
  app->add_option("--neighbors", o.neighbors, "K, neighbors per point including itself")
      ->capture_default_str();
  app->add_option("--kernel-points", o.kernel_points, "L, kernel points including the origin")
      ->capture_default_str();
  app->add_option("--position-width", o.position_width, "Width of the relative position code")
      ->capture_default_str();
  app->add_option("--dropout", o.dropout, "Dropout rate before each hidden fc layer")
      ->capture_default_str();
  app->add_option("--downsample", o.downsample,
                  "Per-layer random downsampling ratios (empty: none)");
  app->add_option("--pooling", o.pooling, "Global pooling: max, sum or max_and_sum")
      ->capture_default_str();
}

void add_train_options(CLI::App* app, TrainOptions& o) {
  app->add_option("--epochs", o.config.epochs, "Training epochs")->capture_default_str();
  app->add_option("--lr-init", o.config.lr_init, "Learning rate at epoch 0")->capture_default_str();
  app->add_option("--lr-final", o.config.lr_final, "Learning rate at the last epoch")
      ->capture_default_str();
  app->add_option("--momentum", o.config.momentum, "Heavy-ball momentum")->capture_default_str();
  app->add_option("--batch-size", o.config.batch_size, "Clouds per minibatch")->capture_default_str();
  app->add_flag("--no-augment", o.no_augment, "Disable scale/translate/jitter augmentation");
}

ClassifierConfig resolve_model(const ModelOptions& o, std::size_t num_classes) {
  ClassifierConfig c;
  c.conv_channels = o.channels;
  c.aggregate_width = o.aggregate;
  c.fc_widths = o.hidden;
  c.fc_widths.push_back(num_classes);
  c.neighbors = o.neighbors;
  c.kernel_points = o.kernel_points;
  c.position_width = o.position_width;
  c.dropout = o.dropout;
  c.downsample_ratios = o.downsample;
  try {
    c.pooling = parse_pooling(o.pooling);
    c.variant = parse_variant(o.variant);
    c.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return c;
}

TrainConfig resolve_train(const TrainOptions& o, std::uint64_t seed) {
  TrainConfig t = o.config;
  t.seed = seed;
  t.augment = !o.no_augment;
  try {
    t.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return t;
}

struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
};

LoadedData load_data(const DataOptions& o, std::uint64_t seed) {
  if (o.data == "synthetic") {
    TrainTestSplit s;
    try {
      s = synth_train_test(o.classes, o.points, o.train_per_class, o.test_per_class, seed);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    LoadedData d{std::move(s.train), std::nullopt};
    if (o.test_per_class > 0) d.test = std::move(s.test);
    return d;
  }
  Rng rng = Rng(seed).stream(Stream::kSampling);
  LoadedData d{load_manifest(o.data, o.points, rng), std::nullopt};
  if (!o.test_data.empty()) {
    d.test = load_manifest(o.test_data, o.points, rng);
    if (d.test->class_names != d.train.class_names)
      throw std::runtime_error("test manifest classes differ from training manifest classes");
  }
  return d;
}

void write_metrics_header(std::ostream& out) { out << "epoch,lr,loss,oa,ma\n"; }

void write_metrics_row(std::ostream& out, std::size_t epoch, double lr, double loss,
                       const Metrics& m) {
  out << epoch << ',' << lr << ',' << loss << ',' << m.oa << ',' << m.ma << '\n';
}

void open_or_throw(std::ofstream& f, const fs::path& path) {
  f.open(path);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << std::setprecision(10);
}

int cmd_gen_kernel(std::size_t count, const std::string& mode, std::uint64_t seed,
                   const std::string& out_path, std::ostream& out) {
  if (count < 2) throw UsageError("--count must be at least 2 (origin plus one direction)");
  KernelLattice lattice;
  if (mode == "fibonacci") {
    lattice = fibonacci_lattice(count);
  } else if (mode == "random") {
    Rng rng = Rng(seed).stream(Stream::kKernel);
    lattice = random_lattice(count, rng);
  } else {
    throw UsageError("--mode must be fibonacci or random");
  }
  if (out_path.empty()) {
    write_lattice(lattice, out);
    return kExitOk;
  }
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
  write_lattice(lattice, f);
  if (!f) throw std::runtime_error("error writing '" + out_path + "'");
  return kExitOk;
}

int cmd_train(const DataOptions& data_opt, const ModelOptions& model_opt,
              const TrainOptions& train_opt, std::uint64_t seed, const std::string& out_dir,
              std::ostream& out) {
  const TrainConfig tc = resolve_train(train_opt, seed);
  LoadedData data = load_data(data_opt, seed);
  const ClassifierConfig cfg = resolve_model(model_opt, data.train.num_classes());

  fs::create_directories(out_dir);
  std::ofstream metrics;
  open_or_throw(metrics, fs::path(out_dir) / "metrics.csv");
  write_metrics_header(metrics);

  Rng init(seed);
  ClassifierState state = build(cfg, init);
  state.class_names = data.train.class_names;
  Metrics last;
  fit(state, data.train, tc, [&](const EpochRecord& r, const ClassifierState& s) {
    last = evaluate(s, data.train);
    write_metrics_row(metrics, r.epoch, r.lr, r.train.loss, last);
    metrics.flush();
  });
  if (!metrics) throw std::runtime_error("error writing metrics.csv");
  save_checkpoint(state, (fs::path(out_dir) / "model.ckpt").string());

  out << std::setprecision(6) << "train oa=" << last.oa << " ma=" << last.ma;
  if (data.test) {
    const Metrics t = evaluate(state, *data.test);
    out << " test oa=" << t.oa << " ma=" << t.ma;
  }
  out << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const DataOptions& data_opt, const std::string& split,
             std::uint64_t seed, std::ostream& out) {
  if (split != "train" && split != "test") throw UsageError("--split must be train or test");
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: '" + checkpoint + "'");
  const ClassifierState state = load_checkpoint(checkpoint);

  // A manifest is evaluated as given; --split only selects a synthetic set.
  DataOptions o = data_opt;
  if (o.data == "synthetic" && split == "test" && o.test_per_class == 0)
    throw UsageError("--split test needs --test-per-class > 0");
  LoadedData data = load_data(o, seed);
  const Dataset& ds = (split == "test" && data.test) ? *data.test : data.train;
  if (ds.class_names != state.class_names)
    throw std::runtime_error("dataset classes do not match the checkpoint's classes");
  const Metrics m = evaluate(state, ds);
  out << std::setprecision(10) << ds.size() << ',' << m.loss << ',' << m.oa << ',' << m.ma << '\n';
  return kExitOk;
}

int cmd_ablate(const DataOptions& data_opt, const ModelOptions& model_opt,
               const TrainOptions& train_opt, std::uint64_t seed, std::size_t seeds,
               const std::vector<std::string>& variant_names, const std::string& out_path,
               std::ostream& out) {
  if (seeds == 0) throw UsageError("--seeds must be at least 1");
  std::vector<Variant> variants;
  try {
    for (const auto& n : variant_names) variants.push_back(parse_variant(n));
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const TrainConfig tc = resolve_train(train_opt, seed);
  LoadedData data = load_data(data_opt, seed);
  if (!data.test) throw UsageError("ablation needs a test set (--test-per-class or --test-data)");
  const ClassifierConfig cfg = resolve_model(model_opt, data.train.num_classes());

  std::vector<std::uint64_t> seed_list;
  for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(seed + i);
  const auto rows = run_ablation(cfg, tc, data.train, *data.test, variants, seed_list,
                                 [&](const AblationRow& r) {
                                   out << variant_name(r.variant) << " seed=" << r.seed
                                       << " oa=" << r.test.oa << " ma=" << r.test.ma << '\n';
                                 });
  std::ofstream f;
  open_or_throw(f, out_path);
  write_ablation_csv(rows, f);
  if (!f) throw std::runtime_error("error writing '" + out_path + "'");
  write_ablation_summary_csv(rows, out);
  return kExitOk;
}

struct BenchOptions {
  std::string op = "all";
  PermutationBenchOptions perm;
  std::size_t network_points = 256;
  double budget_mib = 1024.0;
  std::string out = "bench.csv";
};

int cmd_bench(BenchOptions o, std::uint64_t seed, std::ostream& out) {
  if (o.op != "all" && o.op != "permutation" && o.op != "network")
    throw UsageError("--op must be all, permutation or network");
  if (o.perm.repeats < kMinBenchRepeats)
    throw UsageError("--repeats must be at least " + std::to_string(kMinBenchRepeats));
  o.perm.seed = seed;
  const int saved_threads = thread_count();
  std::vector<BenchReport> rows;
  if (o.op != "network") {
    for (auto& r : bench_permutation(o.perm)) rows.push_back(std::move(r));
  }
  if (o.op != "permutation") {
    if (!o.perm.parallel) set_threads(1);
    ClassifierConfig desk = ClassifierConfig::desk(3);
    desk.neighbors = o.perm.K;
    desk.kernel_points = o.perm.L;
    rows.push_back(bench_network(desk, o.network_points, o.perm.repeats, seed));
    set_threads(saved_threads);

    const auto budget = static_cast<std::size_t>(o.budget_mib * 1024.0 * 1024.0);
    const MaxPointsResult probe = max_points_probe(desk, budget);
    out << "max_points(budget=" << o.budget_mib << " MiB)=" << probe.max_points
        << (probe.saturated ? " (probe cap)" : "") << '\n';
    ClassifierConfig full;
    full.neighbors = 16;
    full.kernel_points = 16;
    Rng rng(seed);
    out << "params(full-size classifier, K=16, L=16)=" << count_params(build(full, rng)) << '\n';
  }
  std::ofstream f;
  open_or_throw(f, o.out);
  write_bench_csv(rows, f);
  write_bench_csv(rows, out);
  if (!f) throw std::runtime_error("error writing '" + o.out + "'");
  return kExitOk;
}

int cmd_check(std::uint64_t seed, const std::string& fault, std::ostream& out) {
  if (fault == "backward_sign") {
    inject_fault(Fault::kBackwardSign);
  } else if (!fault.empty()) {
    throw UsageError("unknown fault '" + fault + "'");
  }
  std::vector<CheckResult> results;
  try {
    results = run_all_checks(seed);
  } catch (...) {
    inject_fault(Fault::kNone);
    throw;
  }
  inject_fault(Fault::kNone);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    failed += r.passed ? 0 : 1;
  }
  out << (failed ? "FAILED " : "OK ") << (results.size() - failed) << '/' << results.size()
      << " checks passed\n";
  return failed ? kExitCheckFailed : kExitOk;
}

}  // namespace

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum on 64-bit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Permutable anisotropic convolution for point cloud classification", "paiconv"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "INI file; [train], [eval], [ablate], [bench], [check] and [gen-kernel] "
                 "sections hold `flag-name = value` lines. Command-line flags win.")
      ->configurable(false);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  int threads = 1;
  // PAICONV_THREADS is read by hand below: CLI11 silently drops environment
  // values that fail validation.
  auto* threads_opt = app.add_option("--threads", threads,
                                     "OpenMP threads for the parallel kernels (env: PAICONV_THREADS)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for data, initialization and training")
        ->capture_default_str();
  };

  std::function<int()> action;
  auto add_command = [&](const std::string& name, const std::string& description) {
    auto* sub = app.add_subcommand(name, description);
    sub->footer("Global flags (before or after the command): --config FILE, --threads N");
    return sub;
  };

  auto* gen = add_command("gen-kernel", "Write kernel points, one 'x y z' line each");
  std::size_t count = 32;
  std::string mode = "fibonacci", gen_out;
  gen->add_option("--count", count, "Points including the origin")->capture_default_str();
  gen->add_option("--mode", mode, "fibonacci or random")->capture_default_str();
  gen->add_option("--out", gen_out, "Output file (default: stdout)");
  add_seed(gen);
  gen->callback([&] { action = [&] { return cmd_gen_kernel(count, mode, seed, gen_out, out); }; });

  // Separate option sets per command: config sections for commands that
  // are not run must not leak into the one that is.
  DataOptions train_data, eval_data, ablate_data;
  ModelOptions train_model, ablate_model;
  TrainOptions train_opt, ablate_opt;

  auto* train = add_command("train", "Train a classifier; writes metrics.csv and model.ckpt");
  std::string out_dir = "run";
  add_data_options(train, train_data);
  add_model_options(train, train_model);
  add_train_options(train, train_opt);
  train->add_option("--test-data", train_data.test_data, "Manifest evaluated after training");
  train->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  add_seed(train);
  train->callback([&] {
    action = [&] { return cmd_train(train_data, train_model, train_opt, seed, out_dir, out); };
  });

  auto* eval = add_command("eval", "Evaluate a checkpoint; prints one CSV row: samples,loss,oa,ma");
  std::string checkpoint, split = "train";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  add_data_options(eval, eval_data);
  eval->add_option("--split", split, "Synthetic split: train or test")->capture_default_str();
  add_seed(eval);
  eval->callback([&] { action = [&] { return cmd_eval(checkpoint, eval_data, split, seed, out); }; });

  auto* ablate = add_command("ablate", "Train variants over consecutive seeds; writes variant,seed,oa,ma rows");
  std::size_t seeds = 5;
  std::vector<std::string> variant_names;
  for (Variant v : kAllVariants) variant_names.emplace_back(variant_name(v));
  std::string ablate_out = "ablation.csv";
  add_data_options(ablate, ablate_data);
  add_model_options(ablate, ablate_model);
  add_train_options(ablate, ablate_opt);
  ablate->remove_option(ablate->get_option("--variant"));
  ablate->add_option("--test-data", ablate_data.test_data, "Test manifest (manifest data only)");
  ablate->add_option("--seeds", seeds, "Number of seeds, starting at --seed")->capture_default_str();
  ablate->add_option("--variants", variant_names, "Variants to train")->capture_default_str();
  ablate->add_option("--out", ablate_out, "Per-run CSV path")->capture_default_str();
  add_seed(ablate);
  ablate->callback([&] {
    action = [&] {
      return cmd_ablate(ablate_data, ablate_model, ablate_opt, seed, seeds, variant_names, ablate_out,
                        out);
    };
  });

  auto* bench = add_command("bench", "Time permutation construction and the network");
  BenchOptions bench_opt;
  bench->add_option("--op", bench_opt.op, "all, permutation or network")->capture_default_str();
  bench->add_option("--n", bench_opt.perm.n, "Points for the permutation benchmark")
      ->capture_default_str();
  bench->add_option("--K", bench_opt.perm.K, "Neighbors per point")->capture_default_str();
  bench->add_option("--L", bench_opt.perm.L, "Kernel points")->capture_default_str();
  bench->add_option("--repeats", bench_opt.perm.repeats, "Timed repeats (at least 5)")
      ->capture_default_str();
  bench->add_option("--sigma", bench_opt.perm.sigma,
                    "Linear-correlation kernel extent; <= 0 uses the mean neighbor distance")
      ->capture_default_str();
  bench->add_flag("--parallel", bench_opt.perm.parallel, "Time the OpenMP path with --threads");
  bench->add_option("--network-points", bench_opt.network_points, "Points for the network timing")
      ->capture_default_str();
  bench->add_option("--budget-mib", bench_opt.budget_mib, "Memory budget for the max-points probe")
      ->capture_default_str();
  bench->add_option("--out", bench_opt.out, "CSV output path")->capture_default_str();
  add_seed(bench);
  bench->callback([&] { action = [&] { return cmd_bench(bench_opt, seed, out); }; });

  auto* check = add_command("check", "Run the invariant suite; exit 3 on any failure");
  std::string fault;
  check->add_option("--inject-fault", fault, "Test fixture: backward_sign")->group("");
  add_seed(check);
  check->callback([&] { action = [&] { return cmd_check(seed, fault, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (threads_opt->count() == 0) {
      if (const char* env = std::getenv("PAICONV_THREADS"); env && *env) {
        const std::string_view text(env);
        const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), threads);
        if (ec != std::errc{} || end != text.data() + text.size() || threads < 1)
          throw UsageError("PAICONV_THREADS must be a positive integer, got '" + std::string(text) + "'");
      }
    }
    set_threads(threads);
    return action();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace paiconv::cli
