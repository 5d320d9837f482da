// Command-line entry point: training runs, the classifier baseline, sampling,
// active learning, metric evaluation and plotting exports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "jebgfn/evalkit.hpp"
#include "jebgfn/tasks.hpp"

namespace fs = std::filesystem;
using namespace jebgfn;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

struct CommonArgs {
  std::string task;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string mode;
};

void add_common(CLI::App* cmd, CommonArgs& a, const std::string& default_task = "") {
  auto* t = cmd->add_option("--task", a.task, "two-moons | four-gaussians | mnist | amp")
                ->check(CLI::IsMember({"two-moons", "four-gaussians", "mnist", "amp"}));
  if (default_task.empty()) t->required();
  else a.task = default_task;
  cmd->add_option("--config", a.config, "flat key = value file")->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "run directory")->required();
  cmd->add_option("--seed", a.seed, "overrides the config seed");
  cmd->add_option("--mode", a.mode, "prefix | any-order")->check(CLI::IsMember({"prefix", "any-order"}));
}

train::TaskConfig resolve_config(const CommonArgs& a) {
  const train::Task task = train::parse_task(a.task);
  train::TaskConfig c = train::task_defaults(task);
  if (!a.config.empty()) c = train::parse_task_config(read_file(a.config), c);
  if (c.task != task) throw std::invalid_argument("config names task '" + std::string(train::to_string(c.task)) + "'");
  if (a.seed) c.train.seed = *a.seed;
  if (!a.mode.empty()) c.train.mode = seq::parse_mode(a.mode);
  c.train.validate();
  return c;
}

void save_run_checkpoint(const train::JointTrainer& trainer, const train::TaskConfig& c, const fs::path& path) {
  nd::Checkpoint ckpt = trainer.to_checkpoint();
  ckpt.strings["task_config"] = c.to_text();
  nd::save_checkpoint(path, ckpt);
}

struct LoadedRun {
  train::TaskConfig config;
  std::unique_ptr<train::JointTrainer> trainer;
};

LoadedRun load_run(const fs::path& path) {
  const nd::Checkpoint ckpt = nd::load_checkpoint(path);
  if (!ckpt.has_string("task_config")) throw std::runtime_error(path.string() + " is not a run checkpoint");
  LoadedRun run;
  const std::string& text = ckpt.string("task_config");
  train::TaskConfig base;
  // The task line comes first so the defaults of that task apply.
  base = train::parse_task_config(text, base);
  run.config = train::parse_task_config(text, train::task_defaults(base.task));
  run.trainer = std::make_unique<train::JointTrainer>(train::task_layout(run.config.task), run.config.train);
  run.trainer->restore(ckpt);
  return run;
}

std::vector<eval::ScoredSample> to_samples(const std::vector<seq::State>& states, train::Task task) {
  std::vector<eval::ScoredSample> out;
  const auto oracle = data::SyntheticOracle::standard();
  for (const auto& s : states) {
    eval::ScoredSample r{s.x_tokens(), s.layout().label_slots ? s.layout().decode_label(s.label_tokens()) : 0, {}};
    if (task == train::Task::Amp) r.score = oracle.score_tokens(r.x);
    out.push_back(std::move(r));
  }
  return out;
}

// Quality numbers that need no external oracle.
std::string sample_metrics(const train::TaskConfig& c, const data::LabeledDataset& ds,
                           const std::vector<eval::ScoredSample>& samples) {
  std::ostringstream os;
  os.precision(17);
  const auto codec = train::task_codec(c.task);
  if (c.task == train::Task::FourGaussians) {
    std::vector<data::Point2> pts;
    std::vector<int> labels;
    for (const auto& s : samples) pts.push_back(codec->decode(s.x)), labels.push_back(static_cast<int>(s.label));
    const auto means = data::four_gaussians_means();
    os << "mode_accuracy = " << eval::mode_accuracy(pts, labels, means, data::kFourGaussiansSigma) << '\n';
  } else if (c.task == train::Task::TwoMoons) {
    double total = 0.0;
    for (const auto& s : samples) {
      const auto p = codec->decode(s.x);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& r : ds.records) {
        if (ds.layout->decode_label(r.y) != s.label) continue;
        const auto q = codec->decode(r.x);
        best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
      }
      total += best;
    }
    os << "mean_nearest_data_distance = " << total / static_cast<double>(samples.size()) << '\n';
  } else if (c.task == train::Task::Amp) {
    std::vector<eval::ScoredSample> positives;
    for (const auto& s : samples)
      if (s.label == 1) positives.push_back(s);
    const std::size_t k = std::min<std::size_t>(100, positives.size());
    if (k > 0) os << eval::compute_metrics(positives, eval::dataset_sequences(ds), k).to_text();
  }
  return os.str();
}

int cmd_train(const CommonArgs& a) {
  const auto c = resolve_config(a);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_file(out / "config.txt", c.to_text());
  auto ds = std::make_shared<data::LabeledDataset>(train::load_task_data(c));
  data::write_dataset_csv(out / "dataset.csv", *ds);
  train::JointTrainer trainer(ds->layout, c.train);
  trainer.begin_phase(ds, c.train.iterations);
  trainer.run(out);
  trainer.log().write_csv(out / "runlog.csv");
  save_run_checkpoint(trainer, c, out / "checkpoint.ckpt");

  nd::Rng rng(c.train.seed + 1);
  std::vector<seq::State> states;
  for (std::size_t label = 0; label < ds->layout->label_classes(); ++label)
    for (auto& s : trainer.sample(c.sample_count, label, rng, c.sample_temperature)) states.push_back(std::move(s));
  const auto samples = to_samples(states, c.task);
  eval::write_samples_csv(out / "samples.csv", *ds->layout, samples);
  const std::string metrics = sample_metrics(c, *ds, samples);
  write_file(out / "metrics.txt", metrics);
  std::cout << "trained " << c.train.iterations << " iterations on " << ds->size() << " records\n" << metrics;
  return 0;
}

int cmd_baseline(const CommonArgs& a) {
  const auto c = resolve_config(a);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_file(out / "config.txt", c.to_text());
  const auto ds = train::load_task_data(c);
  const auto base = train::train_cgfn_baseline(ds, c.train);
  nd::Rng rng(c.train.seed + 1);
  std::vector<eval::ScoredSample> samples;
  for (std::size_t label = 0; label < base.per_class.size(); ++label)
    for (const auto& s : base.sample(label, c.sample_count, rng)) {
      eval::ScoredSample r{s.x_tokens(), label, {}};
      if (c.task == train::Task::Amp) r.score = data::synthetic_oracle_score(data::detokenize_peptide(r.x));
      samples.push_back(std::move(r));
    }
  eval::write_samples_csv(out / "samples.csv", *ds.layout, samples);
  std::ostringstream metrics;
  metrics.precision(17);
  metrics << "classifier_train_accuracy = " << base.train_accuracy << '\n' << sample_metrics(c, ds, samples);
  write_file(out / "metrics.txt", metrics.str());
  std::cout << metrics.str();
  return 0;
}

int cmd_sample(const std::string& checkpoint, std::size_t n, std::optional<std::size_t> label,
               std::optional<double> temperature, const std::string& out, std::uint64_t seed) {
  auto run = load_run(checkpoint);
  const auto& layout = run.trainer->policy().layout();
  if (label && *label >= layout.label_classes())
    throw std::invalid_argument("--label must be below " + std::to_string(layout.label_classes()));
  nd::Rng rng(seed);
  const auto samples =
      to_samples(run.trainer->sample(n, label, rng, temperature.value_or(run.config.sample_temperature)), run.config.task);
  if (out.empty()) eval::write_samples_csv(std::cout, layout, samples);
  else eval::write_samples_csv(out, layout, samples);
  return 0;
}

int cmd_al(const CommonArgs& a, train::ALConfig al) {
  const auto c = resolve_config(a);
  al.sample_temperature = c.sample_temperature;
  const fs::path out(a.out);
  fs::create_directories(out);
  write_file(out / "config.txt", c.to_text());
  const auto initial = train::load_task_data(c);
  data::write_dataset_csv(out / "dataset.csv", initial);
  std::ofstream history(out / "history.csv");
  history.precision(17);
  history << "round,sampled,appended,mean_score,max_score,dataset_size\n";
  const auto hook = [&](const train::ALResult& r, const train::RoundSummary& s) {
    history << s.round << ',' << s.sampled << ',' << s.appended << ',' << s.mean_score << ',' << s.max_score << ','
            << s.dataset_size << std::endl;
    const std::size_t first = r.candidates.size() - s.sampled;
    eval::write_samples_csv(out / ("round_" + std::to_string(s.round) + "_samples.csv"), *initial.layout,
                            std::span(r.candidates).subspan(first));
    std::cout << "round " << s.round << ": mean score " << s.mean_score << ", appended " << s.appended
              << ", dataset " << s.dataset_size << std::endl;
  };
  const auto result = train::run_active_learning(initial, train::synthetic_oracle(), c.train, al, hook);
  data::write_dataset_csv(out / "dataset_final.csv", result.dataset);
  if (result.trainer) save_run_checkpoint(*result.trainer, c, out / "checkpoint.ckpt");
  std::string metrics = result.report ? result.report->to_text() : "";
  if (result.aborted) metrics += "aborted = " + result.abort_reason + '\n';
  write_file(out / "metrics.txt", metrics);
  std::cout << metrics;
  return result.aborted ? 1 : 0;
}

int cmd_eval(const std::string& samples_path, const std::string& dataset_path, std::size_t k,
             const std::string& task, const std::string& out) {
  const auto layout = train::task_layout(train::parse_task(task));
  const auto samples = eval::read_samples_csv(samples_path, *layout);
  const auto initial = data::read_dataset_csv(dataset_path, layout);
  const auto report = eval::compute_metrics(samples, eval::dataset_sequences(initial), k);
  if (!out.empty()) write_file(out, report.to_text());
  std::cout << report.to_text();
  return 0;
}

int cmd_enumerate_check(std::size_t bits, std::size_t iterations, std::uint64_t seed) {
  if (bits == 0 || bits > 16) throw std::invalid_argument("--bits must be in [1, 16]");
  const auto layout = seq::make_layout({.x_length = bits, .x_vocab = 2});
  nd::Rng rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> table(std::size_t{1} << bits);
  for (double& e : table) e = u(rng);
  train::TrainConfig tc;
  tc.iterations = iterations;
  tc.seed = seed;
  tc.energy_steps = 0;
  tc.policy = {.hidden = 64, .hidden_layers = 2};
  train::JointTrainer trainer(layout, tc, std::make_unique<energy::TableEnergy>(layout, table));
  trainer.begin_phase(nullptr, iterations);
  trainer.run();
  const auto pi = gfn::exact_terminal_distribution(trainer.policy());
  const auto target = eval::boltzmann(table);
  std::cout.precision(6);
  std::cout << "bits = " << bits << "\niterations = " << iterations << "\nlog_z = " << trainer.policy().log_z()
            << "\ntv = " << eval::tv_distance(pi, target) << '\n';
  return 0;
}

int cmd_export_grid(const std::string& checkpoint, std::size_t resolution, std::optional<std::size_t> label,
                    std::optional<std::size_t> sample_count, std::uint64_t seed, const std::string& out) {
  auto run = load_run(checkpoint);
  const auto codec = train::task_codec(run.config.task);
  if (!codec) throw std::invalid_argument("export-grid needs a 2D task checkpoint");
  if (sample_count) {
    nd::Rng rng(seed);
    std::vector<data::Point2> pts;
    for (const auto& s : run.trainer->sample(*sample_count, label, rng)) pts.push_back(codec->decode(s.x_tokens()));
    const auto grid = eval::sample_count_grid(pts, *codec, label, resolution);
    grid.write_csv(out);
    std::cout << "cells = " << grid.value.size() << "\nsamples = " << pts.size() << '\n';
    return 0;
  }
  const auto grid = eval::export_energy_grid(run.trainer->energy(), *codec, run.trainer->policy().layout_ptr(),
                                             label, resolution);
  grid.write_csv(out);
  const std::size_t i = grid.argmin();
  std::cout << "cells = " << grid.value.size() << "\nminimum = " << grid.value[i] << " at (" << grid.x[i] << ", "
            << grid.y[i] << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint energy-based GFlowNet training and evaluation"};
  app.require_subcommand(1);

  CommonArgs train_args, base_args, al_args;
  auto* train_cmd = app.add_subcommand("train", "train policy and energy jointly");
  add_common(train_cmd, train_args);
  auto* base_cmd = app.add_subcommand("baseline-cgfn", "classifier-reward conditional GFlowNets");
  add_common(base_cmd, base_args);

  std::string ckpt, sample_out;
  std::size_t n = 1000;
  std::optional<std::size_t> label;
  std::uint64_t sample_seed = 1;
  auto* sample_cmd = app.add_subcommand("sample", "draw terminal samples from a checkpoint");
  sample_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--n", n);
  sample_cmd->add_option("--label", label, "clamp the label");
  sample_cmd->add_option("--out", sample_out, "CSV path; stdout when omitted");
  sample_cmd->add_option("--seed", sample_seed);
  std::optional<double> sample_temperature;
  sample_cmd->add_option("--temperature", sample_temperature, "policy temperature; the run's setting when omitted")
      ->check(CLI::PositiveNumber);

  train::ALConfig al;
  bool cold_start = false;
  auto* al_cmd = app.add_subcommand("al", "active learning with the synthetic oracle");
  add_common(al_cmd, al_args, "amp");
  al_cmd->add_option("--rounds", al.rounds);
  al_cmd->add_option("--per-round", al.per_round);
  al_cmd->add_option("--threshold", al.threshold);
  al_cmd->add_option("--top-k", al.top_k);
  al_cmd->add_flag("--cold-start", cold_start, "retrain from scratch every round");

  std::string samples_path, dataset_path, eval_task = "amp", eval_out;
  std::size_t k = 100;
  auto* eval_cmd = app.add_subcommand("eval", "top-K performance, diversity and novelty");
  eval_cmd->add_option("--samples", samples_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset_path, "initial dataset snapshot")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--k", k);
  eval_cmd->add_option("--task", eval_task)->check(CLI::IsMember({"two-moons", "four-gaussians", "mnist", "amp"}));
  eval_cmd->add_option("--out", eval_out, "also write the report here");

  std::size_t bits = 8, enum_iterations = 2000;
  std::uint64_t enum_seed = 0;
  auto* enum_cmd = app.add_subcommand("enumerate-check", "fit a random energy and report the exact TV");
  enum_cmd->add_option("--bits", bits);
  enum_cmd->add_option("--iterations", enum_iterations);
  enum_cmd->add_option("--seed", enum_seed);

  std::string grid_ckpt, grid_out;
  std::size_t resolution = 100;
  std::optional<std::size_t> grid_label;
  auto* grid_cmd = app.add_subcommand("export-grid", "energy over the codec box as x,y,value CSV");
  grid_cmd->add_option("--checkpoint", grid_ckpt)->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--resolution", resolution);
  grid_cmd->add_option("--label", grid_label, "fixed label; free energy when omitted");
  std::optional<std::size_t> grid_samples;
  std::uint64_t grid_seed = 0;
  grid_cmd->add_option("--samples", grid_samples, "count this many policy samples per cell instead of energies");
  grid_cmd->add_option("--seed", grid_seed);
  grid_cmd->add_option("--out", grid_out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*base_cmd) return cmd_baseline(base_args);
    if (*sample_cmd) return cmd_sample(ckpt, n, label, sample_temperature, sample_out, sample_seed);
    if (*al_cmd) {
      al.warm_start = !cold_start;
      return cmd_al(al_args, al);
    }
    if (*eval_cmd) return cmd_eval(samples_path, dataset_path, k, eval_task, eval_out);
    if (*enum_cmd) return cmd_enumerate_check(bits, enum_iterations, enum_seed);
    if (*grid_cmd) return cmd_export_grid(grid_ckpt, resolution, grid_label, grid_samples, grid_seed, grid_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
