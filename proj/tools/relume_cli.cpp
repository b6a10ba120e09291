// Copyright 2026 The Relume Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// relume: search, train, merge, verify and run the one-layer enhancer.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relume/dataset.hpp"
#include "relume/enhancer.hpp"
#include "relume/evaluation.hpp"
#include "relume/image_io.hpp"
#include "relume/io.hpp"
#include "relume/kernel_algebra.hpp"
#include "relume/model_store.hpp"
#include "relume/search.hpp"
#include "relume/trainer.hpp"

namespace fs = std::filesystem;
using namespace relume;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr double kVerifyTolerance = 1e-10;

/// --created wins, then SOURCE_DATE_EPOCH, else "none".
std::string creation_stamp(const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("SOURCE_DATE_EPOCH");
  if (!env || !*env) return "none";
  const std::time_t t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string with_suffix(const fs::path& p, const std::string& suffix) { return p.string() + suffix; }

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

struct LossFlags {
  double lambda = 1.0;
  double sigma = 0.1;
  LossConfig config() const {
    LossConfig c;
    c.lambda = lambda;
    c.sigma = sigma;
    c.validate();
    return c;
  }
  void add(CLI::App* app) {
    app->add_option("--lambda", lambda, "Smoothness weight")->capture_default_str();
    app->add_option("--sigma", sigma, "Edge weight bandwidth")->capture_default_str();
  }
};

struct HeadFlags {
  double slope = 0.01;
  double floor = 1e-4;
  std::string clamp = "input_floor";
  OutputHead head() const {
    OutputHead h;
    h.activation_slope = slope;
    h.clamp_floor = floor;
    h.clamp_mode = clamp_mode_from_string(clamp);
    h.validate();
    return h;
  }
  void add(CLI::App* app) {
    app->add_option("--slope", slope, "LeakyReLU slope")->capture_default_str();
    app->add_option("--clamp-floor", floor, "Lower bound on the illumination")->capture_default_str();
    app->add_option("--clamp-mode", clamp, "input_floor or unit_interval")
        ->check(CLI::IsMember({"input_floor", "unit_interval"}))
        ->capture_default_str();
  }
};

// ---------------------------------------------------------------------------

struct SearchArgs {
  fs::path train_dir, val_dir, out, ir, log;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double lr_weights = kDefaultWeightLr, lr_arch = kDefaultArchLr, fd_scale = 0.01;
  std::size_t batch = kDefaultBatchSize;
  bool first_order = false;
  std::string created;
  LossFlags loss;
  HeadFlags head;
};

int run_search(const SearchArgs& a) {
  SearchConfig cfg;
  cfg.epochs_total = a.epochs;
  cfg.seed = a.seed;
  cfg.lr_weights = a.lr_weights;
  cfg.lr_arch = a.lr_arch;
  cfg.fd_epsilon_scale = a.fd_scale;
  cfg.batch_size = a.batch;
  cfg.second_order = !a.first_order;
  cfg.loss = a.loss.config();
  cfg.head = a.head.head();
  const auto tr = make_samples(load_images(a.train_dir), cfg.loss);
  const auto val = make_samples(load_images(a.val_dir), cfg.loss);
  const SearchReport r = run_tiered_search(cfg, tr, val);

  ModelMeta meta;
  meta.seed = a.seed;
  meta.loss = cfg.loss;
  meta.created = creation_stamp(a.created);
  save_checkpoint(a.out, r.state, meta);
  const fs::path ir = a.ir.empty() ? fs::path(with_suffix(a.out, ".ir")) : a.ir;
  save_block(ir, BlockFile{r.block, cfg.head}, meta);
  std::ostringstream log;
  write_search_log(log, r);
  const fs::path log_path = a.log.empty() ? fs::path(with_suffix(a.out, ".search.csv")) : a.log;
  write_text(log_path, log.str());

  for (const StageReport& st : r.stages) {
    std::cout << "stage " << to_string(st.tier) << ": " << st.epochs << " epochs, " << st.trace.size()
              << " steps, " << st.seconds << " s";
    if (!st.trace.empty()) std::cout << ", final train loss " << st.trace.back().train_loss;
    std::cout << '\n';
  }
  std::cout << "branches " << r.block.branches.size() << ", merged kernel " << r.merged_kernel_size << "x"
            << r.merged_kernel_size << '\n'
            << "wrote " << a.out.string() << ", " << ir.string() << ", " << log_path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path ir, train_dir, out, log, ir_out;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double lr = kDefaultWeightLr;
  std::size_t batch = kDefaultBatchSize;
  std::string created;
  LossFlags loss;
};

int run_train(const TrainArgs& a) {
  ModelMeta in_meta;
  const BlockFile f = load_block(a.ir, &in_meta);
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.loss = a.loss.config();
  const auto data = make_samples(load_images(a.train_dir), cfg.loss);
  const TrainedBlock t = train_fixed(f.block, data, cfg, f.head);

  ModelMeta meta;
  meta.seed = a.seed;
  meta.loss = cfg.loss;
  meta.created = creation_stamp(a.created);
  save_model(a.out, merge_model(t.block, f.head), meta);
  if (!a.ir_out.empty()) save_block(a.ir_out, BlockFile{t.block, f.head}, meta);
  std::ostringstream log;
  write_trace_csv(log, t.trace);
  const fs::path log_path = a.log.empty() ? fs::path(with_suffix(a.out, ".train.csv")) : a.log;
  write_text(log_path, log.str());
  std::cout << "trained " << t.trace.size() << " steps";
  if (!t.trace.empty()) std::cout << ", final batch loss " << t.trace.back().total;
  std::cout << "\nwrote " << a.out.string() << ", " << log_path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct Loaded {
  LinearBlockIR block;
  SupernetState hard;  // every tier frozen
  OutputHead head;
  ModelMeta meta;
};

Loaded load_architecture(const fs::path& path) {
  const std::string text = read_file(path);
  const std::string kind = file_kind(text);
  Loaded l;
  if (kind == "supernet_checkpoint") {
    const SupernetState s = parse_checkpoint(text, &l.meta);
    l.block = discretize(s);
    l.hard = harden(s);
    l.head = s.head;
  } else if (kind == "block_ir") {
    const BlockFile f = parse_block(text, &l.meta);
    l.block = f.block;
    l.head = f.head;
    l.hard = from_ir(f.block, f.head);
  } else {
    throw Error("'" + path.string() + "' holds a " + kind + " file; expected a checkpoint or block IR");
  }
  return l;
}

struct MergeArgs {
  fs::path checkpoint, out;
  std::string created;
};

int run_merge(const MergeArgs& a) {
  Loaded l = load_architecture(a.checkpoint);
  if (!a.created.empty()) l.meta.created = a.created;
  const EnhancerModel m = merge_model(l.block, l.head);
  save_model(a.out, m, l.meta);
  std::cout << "merged " << l.block.branches.size() << " branches into a " << m.kernel.kernel_height() << "x"
            << m.kernel.kernel_width() << " kernel (" << count_params(m) << " parameters)\nwrote " << a.out.string()
            << '\n';
  return 0;
}

struct VerifyArgs {
  fs::path checkpoint;
  std::size_t trials = 5;
  std::size_t size = 16;
  std::uint64_t seed = 0;
};

int run_verify(const VerifyArgs& a) {
  const Loaded l = load_architecture(a.checkpoint);
  const ConvKernel merged = merge_block(l.block);
  Rng rng = Rng::stream(a.seed, "verify");
  double worst = 0.0;
  for (std::size_t t = 0; t < a.trials; ++t) {
    Tensor y({l.block.channels(), a.size, a.size});
    for (double& v : y.values()) v = rng.uniform();
    const Tensor single = conv2d(y, merged);
    worst = std::max(worst, max_abs_diff(evaluate_block(l.block, y), single));
    worst = std::max(worst, max_abs_diff(forward(l.hard, y).linear, single));
  }
  std::cout << "trials " << a.trials << ", max deviation " << worst << '\n';
  if (!(worst <= kVerifyTolerance)) {
    std::cerr << "merge deviation exceeds " << kVerifyTolerance << '\n';
    return kExitRuntime;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EnhanceArgs {
  fs::path model, in, out;
};

int run_enhance(const EnhanceArgs& a) {
  const EnhancerModel m = load_model(a.model);
  std::vector<fs::path> inputs = fs::is_directory(a.in) ? list_images(a.in) : std::vector<fs::path>{a.in};
  if (inputs.empty()) throw Error("no images in '" + a.in.string() + "'");
  fs::create_directories(a.out);
  for (const fs::path& p : inputs) write_image(enhance(m, read_image(p)), a.out / p.filename());
  std::cout << "enhanced " << inputs.size() << " image(s) into " << a.out.string() << '\n';
  return 0;
}

struct MetricsArgs {
  fs::path ref, test;
};

std::string format_db(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

int run_metrics(const MetricsArgs& a) {
  const auto refs = list_images(a.ref);
  if (refs.empty()) throw Error("no images in '" + a.ref.string() + "'");
  double psnr_sum = 0.0, ssim_sum = 0.0;
  std::cout << "image,psnr,ssim\n";
  for (const fs::path& r : refs) {
    const fs::path t = a.test / r.filename();
    if (!fs::exists(t)) throw Error("'" + t.string() + "' is missing");
    const Tensor ref = read_image(r), test = read_image(t);
    const double p = psnr(test, ref), s = ssim(test, ref);
    psnr_sum += p;
    ssim_sum += s;
    std::cout << r.filename().string() << ',' << format_db(p) << ',' << std::setprecision(6) << std::fixed << s
              << std::defaultfloat << '\n';
  }
  const double n = static_cast<double>(refs.size());
  std::cout << "mean," << format_db(psnr_sum / n) << ',' << std::setprecision(6) << std::fixed << ssim_sum / n
            << std::defaultfloat << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  fs::path model, csv;
  std::size_t runs = 100, warmup = 3;
  std::uint64_t seed = 0;
  std::vector<std::string> resolutions;
  std::string precision = "float32";
  bool json = false;
};

Resolution parse_resolution(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw CLI::ValidationError("--resolution", "expected WIDTHxHEIGHT, got " + s);
  try {
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--resolution", "expected WIDTHxHEIGHT, got " + s);
  }
}

nlohmann::json bench_json(const BenchReport& r) {
  nlohmann::json j;
  j["runs"] = r.runs;
  j["warmup"] = r.warmup;
  j["environment"] = r.environment;
  j["entries"] = nlohmann::json::array();
  for (const BenchEntry& e : r.entries) {
    j["entries"].push_back({{"resolution", e.resolution.label()},
                            {"width", e.resolution.width},
                            {"height", e.resolution.height},
                            {"mean_s", e.mean},
                            {"median_s", e.median},
                            {"stddev_s", e.stddev},
                            {"macs", e.macs},
                            {"params", e.params}});
  }
  return j;
}

int run_bench(const BenchArgs& a) {
  EnhancerModel m{ConvKernel(kDefaultChannels, kDefaultChannels, 3, 3), {}};
  if (!a.model.empty()) m = load_model(a.model);
  BenchOptions opt;
  opt.runs = a.runs;
  opt.warmup = a.warmup;
  opt.seed = a.seed;
  opt.precision = a.precision == "float64" ? BenchPrecision::Float64 : BenchPrecision::Float32;
  if (!a.resolutions.empty()) {
    opt.resolutions.clear();
    for (const std::string& s : a.resolutions) opt.resolutions.push_back(parse_resolution(s));
  }
  const BenchReport r = bench_enhance(m, opt);
  if (a.json) {
    std::cout << bench_json(r).dump(2) << '\n';
  } else {
    write_bench_text(std::cout, r);
  }
  if (!a.csv.empty()) {
    std::ostringstream os;
    write_bench_csv(os, r);
    write_text(a.csv, os.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out, clean_out;
  SynthRecipe recipe;
  std::string stream = "train";
};

int run_synth(const SynthArgs& a) {
  const auto pairs = synth_dataset(a.recipe, a.stream);
  fs::create_directories(a.out);
  if (!a.clean_out.empty()) fs::create_directories(a.clean_out);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.ppm", i);
    write_image(pairs[i].low, a.out / name);
    if (!a.clean_out.empty()) write_image(pairs[i].clean, a.clean_out / name);
  }
  std::cout << "wrote " << pairs.size() << " image(s) to " << a.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Searched, merged one-layer low-light enhancer"};
  app.set_config("--config", "", "key=value file; flags given on the command line win");
  app.require_subcommand(1, 1);

  SearchArgs search;
  auto* s = app.add_subcommand("search", "Tiered architecture search; writes checkpoint, IR and loss log");
  s->add_option("--train-dir", search.train_dir, "Training images")->required()->check(CLI::ExistingDirectory);
  s->add_option("--val-dir", search.val_dir, "Validation images")->required()->check(CLI::ExistingDirectory);
  s->add_option("--out", search.out, "Checkpoint path")->required();
  s->add_option("--ir", search.ir, "Block IR path (default: OUT.ir)");
  s->add_option("--log", search.log, "Loss CSV path (default: OUT.search.csv)");
  s->add_option("--epochs", search.epochs, "Total search epochs")->capture_default_str();
  s->add_option("--seed", search.seed)->capture_default_str();
  s->add_option("--lr-weights", search.lr_weights)->capture_default_str();
  s->add_option("--lr-arch", search.lr_arch)->capture_default_str();
  s->add_option("--fd-scale", search.fd_scale, "Finite-difference probe scale")->capture_default_str();
  s->add_option("--batch-size", search.batch)->capture_default_str();
  s->add_flag("--first-order", search.first_order, "Drop the second-order hypergradient term");
  s->add_option("--created", search.created, "Creation stamp recorded in outputs");
  search.loss.add(s);
  search.head.add(s);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a block IR, merge it and write the model");
  t->add_option("--ir", train.ir, "Block IR to train")->required()->check(CLI::ExistingFile);
  t->add_option("--train-dir", train.train_dir)->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", train.out, "Model path")->required();
  t->add_option("--log", train.log, "Loss CSV path (default: OUT.train.csv)");
  t->add_option("--ir-out", train.ir_out, "Also write the trained block IR");
  t->add_option("--epochs", train.epochs)->capture_default_str();
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--lr", train.lr)->capture_default_str();
  t->add_option("--batch-size", train.batch)->capture_default_str();
  t->add_option("--created", train.created);
  train.loss.add(t);

  MergeArgs merge;
  auto* m = app.add_subcommand("merge", "Collapse a checkpoint or block IR into one convolution");
  m->add_option("--checkpoint", merge.checkpoint)->required()->check(CLI::ExistingFile);
  m->add_option("--out", merge.out, "Model path")->required();
  m->add_option("--created", merge.created);

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Check merged and multi-branch outputs agree on random inputs");
  v->add_option("--checkpoint", verify.checkpoint)->required()->check(CLI::ExistingFile);
  v->add_option("--trials", verify.trials)->capture_default_str()->check(CLI::PositiveNumber);
  v->add_option("--size", verify.size, "Side of the random inputs")->capture_default_str()->check(CLI::PositiveNumber);
  v->add_option("--seed", verify.seed)->capture_default_str();

  EnhanceArgs enh;
  auto* e = app.add_subcommand("enhance", "Enhance an image or a directory of images");
  e->add_option("--model", enh.model)->required()->check(CLI::ExistingFile);
  e->add_option("--in", enh.in, "Image file or directory")->required()->check(CLI::ExistingPath);
  e->add_option("--out", enh.out, "Output directory")->required();

  MetricsArgs metrics;
  auto* mt = app.add_subcommand("metrics", "PSNR and SSIM of same-named images");
  mt->add_option("--ref", metrics.ref)->required()->check(CLI::ExistingDirectory);
  mt->add_option("--test", metrics.test)->required()->check(CLI::ExistingDirectory);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time enhancement at 720p, 1080p and 1440p");
  b->add_option("--model", bench.model, "Model (default: untrained 3x3)")->check(CLI::ExistingFile);
  b->add_option("--runs", bench.runs)->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--warmup", bench.warmup)->capture_default_str();
  b->add_option("--seed", bench.seed)->capture_default_str();
  b->add_option("--resolution", bench.resolutions, "WIDTHxHEIGHT, repeatable");
  b->add_option("--precision", bench.precision)
      ->check(CLI::IsMember({"float32", "float64"}))
      ->capture_default_str();
  b->add_option("--csv", bench.csv, "Also write the report as CSV");
  b->add_flag("--json", bench.json, "Print the report as JSON");

  SynthArgs synth;
  auto* sy = app.add_subcommand("synth", "Write synthetic low-light images");
  sy->add_option("--count", synth.recipe.count)->capture_default_str()->check(CLI::PositiveNumber);
  sy->add_option("--size", synth.recipe.size)->capture_default_str()->check(CLI::PositiveNumber);
  sy->add_option("--seed", synth.recipe.seed)->capture_default_str();
  sy->add_option("--gamma-min", synth.recipe.gamma_min)->capture_default_str();
  sy->add_option("--gamma-max", synth.recipe.gamma_max)->capture_default_str();
  sy->add_option("--scale-min", synth.recipe.scale_min)->capture_default_str();
  sy->add_option("--scale-max", synth.recipe.scale_max)->capture_default_str();
  sy->add_option("--stream", synth.stream, "Sub-stream name; different names give disjoint sets")
      ->capture_default_str();
  sy->add_option("--out", synth.out, "Directory for the dark images")->required();
  sy->add_option("--clean-out", synth.clean_out, "Directory for the clean references");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*s) return run_search(search);
    if (*t) return run_train(train);
    if (*m) return run_merge(merge);
    if (*v) return run_verify(verify);
    if (*e) return run_enhance(enh);
    if (*mt) return run_metrics(metrics);
    if (*b) return run_bench(bench);
    if (*sy) return run_synth(synth);
  } catch (const CLI::ValidationError& ex) {
    std::cerr << ex.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitRuntime;
  } catch (const DomainError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
