#pragma once

// Alternating policy/energy training, the classifier-reward conditional
// GFlowNet baseline and the active-learning driver.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jebgfn/datasets.hpp"
#include "jebgfn/energy.hpp"
#include "jebgfn/evalkit.hpp"
#include "jebgfn/ndmath/adam.hpp"
#include "jebgfn/ndmath/checkpoint.hpp"
#include "jebgfn/policy.hpp"

namespace jebgfn::train {

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t batch = 64;
  double policy_lr = 1e-3;
  double energy_lr = 1e-3;
  /// log Z moves much further than the network weights, so it gets its own rate.
  double log_z_lr = 0.1;
  double policy_l2 = 0.0;
  double energy_l2 = 0.0;
  /// Exploration mixes in uniform actions with probability epsilon_start,
  /// annealed linearly to epsilon_end over the last tenth of the phase.
  double epsilon_start = 0.01;
  double epsilon_end = 0.0;
  energy::ScheduleKind k_kind = energy::ScheduleKind::LinearRamp;
  std::size_t k_min = 1;
  std::size_t k_max = 0;  // 0: every slot
  seq::Mode mode = seq::Mode::Prefix;
  std::uint64_t seed = 0;
  gfn::PolicyConfig policy;
  energy::EnergyConfig energy;
  std::size_t policy_steps = 1;  // policy updates per iteration
  std::size_t energy_steps = 1;  // energy updates per iteration
  std::size_t checkpoint_every = 0;  // 0: never
  /// Negatives come from chains carried across iterations instead of chains
  /// restarted at each data batch.
  bool persistent_chains = false;

  void validate() const;
  /// Flat `key = value` lines, readable by apply_config_entry.
  std::string to_text() const;
};

/// Sets one key; returns false for unknown keys, throws on bad values.
bool apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value);

struct LogRow {
  std::size_t iteration = 0;
  double tb_loss = 0.0;
  double log_z = 0.0;
  double mean_log_reward = 0.0;
  double energy_gap = 0.0;  // mean E(data) - mean E(negatives)
  double acceptance = 0.0;  // fraction of MH proposals accepted
  std::size_t k = 0;
  double epsilon = 0.0;
  bool operator==(const LogRow&) const = default;
};

struct RunLog {
  std::vector<LogRow> rows;
  void write_csv(const std::filesystem::path& path) const;
};

/// Energy of the terminal, as a log-reward for the policy.
std::vector<double> log_rewards(const energy::EnergyFunction& energy, std::span<const seq::Trajectory> trajs);

/// Owns the policy, the energy and both optimizers for one run.
class JointTrainer {
 public:
  /// Learned energy model built from the config.
  JointTrainer(seq::LayoutPtr layout, TrainConfig config);
  /// Caller-supplied energy, e.g. a fixed target for policy-only training.
  JointTrainer(seq::LayoutPtr layout, TrainConfig config, std::unique_ptr<energy::EnergyFunction> energy);

  const TrainConfig& config() const { return config_; }
  gfn::PolicyModel& policy() { return policy_; }
  const gfn::PolicyModel& policy() const { return policy_; }
  energy::EnergyFunction& energy() { return *energy_; }
  const energy::EnergyFunction& energy() const { return *energy_; }
  const RunLog& log() const { return log_; }
  std::size_t iteration() const { return iteration_; }

  /// Sets the data for the next `iterations` iterations and restarts the
  /// epsilon and K schedules.
  void begin_phase(std::shared_ptr<const data::LabeledDataset> dataset, std::size_t iterations);

  /// One policy update on trajectories rewarded by the current energy.
  /// Returns the TB loss; changes no energy parameter.
  double policy_step();
  /// One contrastive-divergence update against MH-refined negatives.
  /// Changes no policy parameter.
  energy::CdStats energy_step(double* acceptance = nullptr);
  /// Policy steps then energy steps, logged as one row.
  const LogRow& step();
  /// Runs the rest of the phase, writing periodic checkpoints into
  /// `checkpoint_dir` when set.
  void run(const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

  double current_epsilon() const;
  std::size_t current_k() const;

  /// Conditional samples; with no label the label is sampled too.
  std::vector<seq::State> sample(std::size_t count, std::optional<std::size_t> label, nd::Rng& rng,
                                 double temperature = 1.0) const;

  nd::Checkpoint to_checkpoint() const;
  /// Restores parameters, optimizers, counters and the random stream. The
  /// layout and config must match the ones the checkpoint was written with.
  void restore(const nd::Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const { nd::save_checkpoint(path, to_checkpoint()); }

 private:
  void check_finite(double v, const char* what) const;

  seq::LayoutPtr layout_;
  TrainConfig config_;
  gfn::PolicyModel policy_;
  std::unique_ptr<energy::EnergyFunction> energy_;
  nd::AdamState policy_opt_;
  nd::AdamState energy_opt_;
  std::vector<double> policy_lr_scale_;
  nd::Rng rng_;
  std::shared_ptr<const data::LabeledDataset> dataset_;
  std::vector<seq::State> chains_;  // persistent-chain states, empty until first used
  std::size_t iteration_ = 0;
  std::size_t phase_iteration_ = 0;
  std::size_t phase_length_ = 0;
  RunLog log_;
};

/// Builds a JointTrainer on the dataset and runs the whole schedule.
std::unique_ptr<JointTrainer> train_jebgfn(std::shared_ptr<const data::LabeledDataset> dataset,
                                           const TrainConfig& config);

/// Dense classifier p(y | x) over the x tokens of a layout.
class Classifier {
 public:
  Classifier(seq::LayoutPtr layout, std::size_t hidden, std::size_t hidden_layers, std::uint64_t seed);
  std::size_t classes() const { return classes_; }
  nd::ParamSet& params() { return params_; }
  /// [B, classes] log-probabilities.
  nd::Tensor log_probs(std::span<const std::vector<int>> xs) const;
  double accuracy(const data::LabeledDataset& dataset) const;

 private:
  seq::LayoutPtr layout_;
  std::size_t classes_;
  nd::ParamSet params_;
  nd::Tensor table_;
  nd::Tensor bias_;
  nd::Mlp trunk_;
};

struct ClassifierConfig {
  std::size_t hidden = 128;
  std::size_t hidden_layers = 2;
  std::size_t epochs = 60;
  std::size_t batch = 128;
  double lr = 1e-3;
  double min_accuracy = 0.95;
};

struct CgfnBaseline {
  std::shared_ptr<Classifier> classifier;
  double train_accuracy = 0.0;
  seq::LayoutPtr x_layout;  // the data slots alone
  /// One trainer per class; its energy is -log p(class | x) and stays fixed.
  std::vector<std::unique_ptr<JointTrainer>> per_class;

  std::vector<seq::State> sample(std::size_t cls, std::size_t count, nd::Rng& rng) const;
};

/// Trains the classifier, refusing to continue below min_accuracy, then one
/// x-only GFlowNet per class for config.iterations policy steps.
CgfnBaseline train_cgfn_baseline(const data::LabeledDataset& dataset, const TrainConfig& config,
                                 const ClassifierConfig& classifier = {});

struct ALConfig {
  std::size_t rounds = 10;
  std::size_t per_round = 1000;
  double threshold = data::kAmpThreshold;
  std::size_t top_k = 100;
  bool warm_start = true;
  std::size_t positive_label = 1;  // class sampled each round
  /// Policy temperature for the round candidates only; training is untouched.
  double sample_temperature = 1.0;

  void validate() const;
};

/// Batch scorer. Throwing aborts the current round.
using Oracle = std::function<std::vector<double>(std::span<const std::vector<int>>)>;

struct RoundSummary {
  std::size_t round = 0;  // 1-based
  std::size_t sampled = 0;
  std::size_t appended = 0;  // new unique sequences
  double mean_score = 0.0;
  double max_score = 0.0;
  std::size_t dataset_size = 0;
};

struct ALResult {
  data::LabeledDataset dataset;
  std::vector<RoundSummary> history;
  /// Every scored candidate; `label` holds the thresholded label.
  std::vector<eval::ScoredSample> candidates;
  std::vector<std::size_t> candidate_round;
  /// Top-K over every candidate of every completed round, novelty against
  /// the initial dataset.
  std::optional<eval::MetricsReport> report;
  std::unique_ptr<JointTrainer> trainer;
  bool aborted = false;
  std::string abort_reason;
};

/// Called after each completed round, e.g. to write per-round files.
using RoundHook = std::function<void(const ALResult&, const RoundSummary&)>;

/// Round r trains on the current data (warm-started from round r-1 unless
/// disabled, with seed + r - 1 otherwise), samples per_round sequences of the
/// positive label, scores and relabels them, and appends the unseen ones
/// tagged with round r.
ALResult run_active_learning(data::LabeledDataset initial, const Oracle& oracle, const TrainConfig& config,
                             const ALConfig& al, const RoundHook& hook = {});

/// Oracle that applies the shipped synthetic scorer to peptide tokens.
Oracle synthetic_oracle();

}  // namespace jebgfn::train
