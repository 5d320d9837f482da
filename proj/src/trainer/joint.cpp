#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "jebgfn/ndmath/ops.hpp"
#include "jebgfn/trainer.hpp"

namespace jebgfn::train {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// Adds l2 * theta to every gradient except the named one.
void add_l2(nd::ParamSet& params, double l2, const std::string& skip = {}) {
  if (l2 == 0.0) return;
  for (auto& [name, t] : params) {
    if (name == skip) continue;
    auto g = t.mutable_grad();
    const auto v = t.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += l2 * v[i];
  }
}

std::string layout_text(const seq::JointLayout& l) {
  std::ostringstream os;
  os << l.x_length << ',' << l.x_vocab << ',' << l.label_slots << ',' << l.label_vocab << ','
     << (l.placement == seq::LabelPlacement::Prefix ? "prefix" : "suffix") << ','
     << (l.variable_length ? "variable" : "fixed");
  return os.str();
}

}  // namespace

void RunLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  os << "iteration,tb_loss,log_z,mean_log_reward,energy_gap,acceptance,k,epsilon\n";
  for (const auto& r : rows)
    os << r.iteration << ',' << r.tb_loss << ',' << r.log_z << ',' << r.mean_log_reward << ',' << r.energy_gap
       << ',' << r.acceptance << ',' << r.k << ',' << r.epsilon << '\n';
}

std::vector<double> log_rewards(const energy::EnergyFunction& energy, std::span<const seq::Trajectory> trajs) {
  std::vector<seq::State> terminals;
  terminals.reserve(trajs.size());
  for (const auto& t : trajs) terminals.push_back(t.terminal());
  std::vector<double> out = energy.energy_values(terminals);
  for (double& e : out) e = energy::log_reward_from_energy(e);
  return out;
}

JointTrainer::JointTrainer(seq::LayoutPtr layout, TrainConfig config)
    : JointTrainer(layout, config,
                   std::make_unique<energy::EnergyModel>(layout, config.energy, config.seed + kGolden)) {}

JointTrainer::JointTrainer(seq::LayoutPtr layout, TrainConfig config, std::unique_ptr<energy::EnergyFunction> energy)
    : layout_(std::move(layout)),
      config_((config.validate(), config)),
      policy_(layout_, config_.mode, config_.policy, config_.seed),
      energy_(std::move(energy)),
      policy_opt_(nd::make_adam(policy_.params(), {.lr = config_.policy_lr})),
      energy_opt_(nd::make_adam(energy_->params(), {.lr = config_.energy_lr})),
      rng_(config_.seed + 2 * kGolden) {
  if (config_.k_max > layout_->slot_count()) throw std::invalid_argument("config: k_max exceeds the slot count");
  for (const auto& [name, t] : policy_.params())
    policy_lr_scale_.push_back(name == "log_z" ? config_.log_z_lr / config_.policy_lr : 1.0);
}

void JointTrainer::begin_phase(std::shared_ptr<const data::LabeledDataset> dataset, std::size_t iterations) {
  if (iterations == 0) throw std::invalid_argument("begin_phase: iterations must be > 0");
  if (config_.energy_steps > 0) {
    if (!dataset || dataset->empty()) throw std::invalid_argument("begin_phase: empty dataset");
    if (dataset->layout && layout_text(*dataset->layout) != layout_text(*layout_))
      throw std::invalid_argument("begin_phase: dataset layout differs from the trainer's");
  }
  dataset_ = std::move(dataset);
  chains_.clear();
  phase_iteration_ = 0;
  phase_length_ = iterations;
}

double JointTrainer::current_epsilon() const {
  if (phase_length_ <= 1) return config_.epsilon_start;
  const double start = 0.9 * static_cast<double>(phase_length_ - 1);
  const double at = static_cast<double>(std::min(phase_iteration_, phase_length_ - 1));
  if (at <= start) return config_.epsilon_start;
  const double f = (at - start) / (static_cast<double>(phase_length_ - 1) - start);
  return config_.epsilon_start + (config_.epsilon_end - config_.epsilon_start) * f;
}

std::size_t JointTrainer::current_k() const {
  energy::KSchedule s{config_.k_kind, config_.k_min, config_.k_max == 0 ? layout_->slot_count() : config_.k_max,
                      std::max<std::size_t>(phase_length_, 1)};
  s.validate(layout_->slot_count());
  return energy::k_for_iteration(s, std::min(phase_iteration_, s.total - 1));
}

void JointTrainer::check_finite(double v, const char* what) const {
  if (!std::isfinite(v))
    throw std::domain_error("iteration " + std::to_string(iteration_) + ": non-finite " + what);
}

double JointTrainer::policy_step() {
  const auto trajs = gfn::sample_trajectories(policy_, config_.batch, {.epsilon = current_epsilon()}, rng_);
  const auto rewards = log_rewards(*energy_, trajs);
  double loss_value = 0.0;
  nd::Tape tape;
  try {
    nd::TapeScope scope(tape);
    const nd::Tensor loss = gfn::tb_loss_batch(policy_, trajs, rewards);
    loss_value = loss.item();
    check_finite(loss_value, "TB loss");
    tape.backward(loss);
  } catch (const std::domain_error& e) {
    policy_.params().zero_grad();
    throw std::domain_error("iteration " + std::to_string(iteration_) + ": policy update failed: " + e.what());
  }
  add_l2(policy_.params(), config_.policy_l2, "log_z");
  nd::adam_step(policy_.params(), policy_opt_, policy_lr_scale_);
  return loss_value;
}

energy::CdStats JointTrainer::energy_step(double* acceptance) {
  if (!dataset_ || dataset_->empty()) throw std::logic_error("energy_step: no dataset; call begin_phase first");
  std::uniform_int_distribution<std::size_t> pick(0, dataset_->size() - 1);
  std::vector<seq::State> positives;
  positives.reserve(config_.batch);
  for (std::size_t i = 0; i < config_.batch; ++i) positives.push_back(dataset_->terminal(pick(rng_), config_.mode));

  if (config_.persistent_chains && chains_.empty()) chains_ = positives;
  const auto& starts = config_.persistent_chains ? chains_ : positives;
  auto proposals = energy::propose_back_forth(*energy_, policy_, starts, current_k(), rng_);
  std::vector<seq::State> negatives;
  negatives.reserve(proposals.size());
  std::size_t accepted = 0;
  for (auto& p : proposals) {
    const bool ok = energy::mh_accept(p, rng_);
    accepted += ok ? 1 : 0;
    negatives.push_back(ok ? p.candidate : p.origin);
  }
  if (config_.persistent_chains) chains_ = negatives;
  if (acceptance) *acceptance = static_cast<double>(accepted) / static_cast<double>(proposals.size());

  energy::CdStats stats;
  nd::Tape tape;
  try {
    nd::TapeScope scope(tape);
    const nd::Tensor pos = nd::mean(energy_->energies(positives));
    const nd::Tensor neg = nd::mean(energy_->energies(negatives));
    stats.mean_positive = pos.item();
    stats.mean_negative = neg.item();
    check_finite(stats.gap(), "energy gap");
    tape.backward(nd::sub(pos, neg));
  } catch (const std::domain_error& e) {
    energy_->params().zero_grad();
    throw std::domain_error("iteration " + std::to_string(iteration_) + ": energy update failed: " + e.what());
  }
  add_l2(energy_->params(), config_.energy_l2);
  nd::adam_step(energy_->params(), energy_opt_);
  return stats;
}

const LogRow& JointTrainer::step() {
  if (phase_length_ == 0) throw std::logic_error("step: call begin_phase first");
  LogRow row;
  row.iteration = iteration_;
  row.epsilon = current_epsilon();
  row.k = current_k();
  for (std::size_t i = 0; i < config_.policy_steps; ++i) row.tb_loss += policy_step() / config_.policy_steps;
  row.log_z = policy_.log_z();
  for (std::size_t i = 0; i < config_.energy_steps; ++i) {
    double acc = 0.0;
    const auto stats = energy_step(&acc);
    row.energy_gap += stats.gap() / config_.energy_steps;
    row.acceptance += acc / config_.energy_steps;
  }
  if (config_.energy_steps > 0 && dataset_) {
    // Mean log-reward of a small data batch tracks how the energy scale drifts.
    std::vector<seq::State> probe;
    for (std::size_t i = 0; i < std::min<std::size_t>(dataset_->size(), 16); ++i)
      probe.push_back(dataset_->terminal(i, config_.mode));
    for (double e : energy_->energy_values(probe)) row.mean_log_reward += energy::log_reward_from_energy(e);
    row.mean_log_reward /= static_cast<double>(probe.size());
  }
  ++iteration_;
  ++phase_iteration_;
  log_.rows.push_back(row);
  return log_.rows.back();
}

void JointTrainer::run(const std::optional<std::filesystem::path>& checkpoint_dir) {
  while (phase_iteration_ < phase_length_) {
    step();
    if (checkpoint_dir && config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0)
      save(*checkpoint_dir / ("checkpoint_" + std::to_string(iteration_) + ".ckpt"));
  }
}

std::vector<seq::State> JointTrainer::sample(std::size_t count, std::optional<std::size_t> label, nd::Rng& rng,
                                             double temperature) const {
  gfn::RolloutConfig rc;
  rc.temperature = temperature;
  if (label) rc.clamped_labels = layout_->encode_label(*label);
  std::vector<seq::State> out;
  out.reserve(count);
  constexpr std::size_t kChunk = 256;
  for (std::size_t done = 0; done < count; done += kChunk)
    for (auto& t : gfn::sample_trajectories(policy_, std::min(kChunk, count - done), rc, rng))
      out.push_back(t.terminal());
  return out;
}

nd::Checkpoint JointTrainer::to_checkpoint() const {
  nd::Checkpoint c;
  c.strings["kind"] = "jebgfn-trainer";
  c.strings["layout"] = layout_text(*layout_);
  c.strings["config"] = config_.to_text();
  c.strings["iteration"] = std::to_string(iteration_);
  c.strings["phase_iteration"] = std::to_string(phase_iteration_);
  c.strings["phase_length"] = std::to_string(phase_length_);
  std::ostringstream rng;
  rng << rng_;
  c.strings["rng"] = rng.str();
  std::string chains;
  for (const auto& s : chains_) chains += seq::serialize_terminal(s) + '\n';
  c.strings["chains"] = chains;
  nd::export_params(policy_.params(), "policy.", c);
  nd::export_params(energy_->params(), "energy.", c);
  nd::export_adam(policy_.params(), policy_opt_, "policy_adam.", c);
  nd::export_adam(energy_->params(), energy_opt_, "energy_adam.", c);
  return c;
}

void JointTrainer::restore(const nd::Checkpoint& c) {
  if (!c.has_string("kind") || c.string("kind") != "jebgfn-trainer")
    throw std::runtime_error("restore: not a trainer checkpoint");
  if (c.string("layout") != layout_text(*layout_)) throw std::runtime_error("restore: layout mismatch");
  if (c.string("config") != config_.to_text()) throw std::runtime_error("restore: config mismatch");
  nd::import_params(policy_.params(), "policy.", c);
  nd::import_params(energy_->params(), "energy.", c);
  policy_opt_ = nd::import_adam(policy_.params(), "policy_adam.", c);
  energy_opt_ = nd::import_adam(energy_->params(), "energy_adam.", c);
  iteration_ = std::stoull(c.string("iteration"));
  phase_iteration_ = std::stoull(c.string("phase_iteration"));
  phase_length_ = std::stoull(c.string("phase_length"));
  std::istringstream rng(c.string("rng"));
  rng >> rng_;
  if (!rng) throw std::runtime_error("restore: corrupt random stream state");
  chains_.clear();
  std::istringstream chains(c.has_string("chains") ? c.string("chains") : std::string());
  for (std::string line; std::getline(chains, line);)
    chains_.push_back(seq::parse_terminal(layout_, config_.mode, line));
  log_.rows.clear();
}

std::unique_ptr<JointTrainer> train_jebgfn(std::shared_ptr<const data::LabeledDataset> dataset,
                                           const TrainConfig& config) {
  if (!dataset || dataset->empty()) throw std::invalid_argument("train_jebgfn: empty dataset");
  auto trainer = std::make_unique<JointTrainer>(dataset->layout, config);
  trainer->begin_phase(std::move(dataset), config.iterations);
  trainer->run();
  return trainer;
}

}  // namespace jebgfn::train
