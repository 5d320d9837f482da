#pragma once

// GFlowNet policy: forward policy P_F, backward policy P_B, log-partition
// estimate log Z, trajectory sampling and the trajectory-balance loss.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "jebgfn/ndmath/nn.hpp"
#include "jebgfn/ndmath/tensor.hpp"
#include "jebgfn/seqspace.hpp"

namespace jebgfn::gfn {

struct PolicyConfig {
  std::size_t hidden = 256;
  std::size_t hidden_layers = 3;
  /// Learn P_B with its own head (any-order only). Otherwise P_B is uniform
  /// over parents.
  bool learned_backward = false;
};

/// Encoder, shared trunk and heads. The encoder is a one-hot over
/// (slot, token-or-UNSET) concatenated across slots and fed to the first
/// hidden layer; it is implemented as an embedding bag with identical math.
class PolicyModel {
 public:
  PolicyModel(seq::LayoutPtr layout, seq::Mode mode, PolicyConfig config, std::uint64_t seed);

  const seq::JointLayout& layout() const { return *layout_; }
  const seq::LayoutPtr& layout_ptr() const { return layout_; }
  seq::Mode mode() const { return mode_; }
  const PolicyConfig& config() const { return config_; }

  nd::ParamSet& params() { return params_; }
  const nd::ParamSet& params() const { return params_; }
  double log_z() const { return log_z_.item(); }
  const nd::Tensor& log_z_tensor() const { return log_z_; }

  /// Width of the forward head: max_vocab in prefix mode, slots*max_vocab
  /// in any-order mode.
  std::size_t forward_width() const;
  std::size_t action_column(const seq::Action& a) const;
  seq::Action action_at(const seq::State& s, std::size_t column) const;
  std::vector<std::uint8_t> forward_mask(std::span<const seq::State> states) const;

  /// [B, forward_width] log-probabilities; invalid entries hold
  /// nd::kMaskedLogProb. Recorded on the active tape, if any.
  nd::Tensor forward_logprobs(std::span<const seq::State> states) const;
  /// [B, slots] log P_B(parent obtained by unsetting slot | state). Uniform
  /// mode returns a constant tensor.
  nd::Tensor backward_logprobs(std::span<const seq::State> states) const;
  /// log P_B(parent | state) for a single backward action, no tape.
  double backward_logprob_step(const seq::State& child, std::size_t slot) const;

  /// Valid forward actions of a non-terminal state with their log-probabilities.
  std::vector<std::pair<seq::Action, double>> forward_step_logprobs(const seq::State& state) const;

  void zero_parameters();

 private:
  nd::Tensor trunk(std::span<const seq::State> states) const;
  std::vector<std::size_t> encode(std::span<const seq::State> states) const;

  seq::LayoutPtr layout_;
  seq::Mode mode_;
  PolicyConfig config_;
  nd::ParamSet params_;
  nd::Tensor encoder_;       // [(slots * (max_vocab + 1)), hidden]
  nd::Tensor encoder_bias_;  // [hidden]
  nd::Mlp trunk_;            // remaining hidden layers
  nd::Linear forward_head_;
  std::optional<nd::Linear> backward_head_;
  nd::Tensor log_z_;         // [1]
};

struct RolloutConfig {
  double epsilon = 0.0;  // probability of a uniformly random valid action
  /// Non-mixed actions are drawn from softmax(log P_F / temperature).
  double temperature = 1.0;
  std::optional<std::vector<int>> clamped_labels;
  std::uint64_t seed = 0;
};

/// Rolls out complete trajectories in lockstep. Recorded forward
/// log-probabilities are those of the unmixed, untempered policy.
std::vector<seq::Trajectory> sample_trajectories(const PolicyModel& policy, std::size_t count,
                                                 const RolloutConfig& config, nd::Rng& rng);
seq::Trajectory sample_trajectory(const PolicyModel& policy, const RolloutConfig& config);
/// Forward rollouts from arbitrary starting states until each is terminal.
std::vector<seq::Trajectory> rollout_from(const PolicyModel& policy, std::vector<seq::State> starts,
                                          double epsilon, nd::Rng& rng, double temperature = 1.0);

/// Sum of log P_B over the trajectory under the current policy (0 in prefix mode).
double backward_logprob(const PolicyModel& policy, const seq::Trajectory& traj);
/// Sum of log P_F over the trajectory under the current policy.
double forward_logprob(const PolicyModel& policy, const seq::Trajectory& traj);

/// (log Z + sum log P_F - log_reward - sum log P_B)^2, differentiable in the
/// policy parameters (including log Z) when a tape is active.
nd::Tensor tb_loss(const PolicyModel& policy, const seq::Trajectory& traj, double log_reward);
/// Mean of per-trajectory losses.
nd::Tensor tb_loss_batch(const PolicyModel& policy, std::span<const seq::Trajectory> trajs,
                         std::span<const double> log_rewards);

/// Exact terminal distribution pi(x) in enumerate_terminals order.
std::vector<double> exact_terminal_distribution(const PolicyModel& policy,
                                                std::size_t cap = seq::kDefaultEnumerationCap);

// Batched path evaluation without a tape.

struct ForwardStep {
  const seq::State* state;
  seq::Action action;
  std::size_t group;
};
struct BackwardStep {
  const seq::State* child;
  std::size_t slot;
  std::size_t group;
};
std::vector<double> sum_forward_logprobs(const PolicyModel& policy,
                                         std::span<const ForwardStep> steps, std::size_t groups);
std::vector<double> sum_backward_logprobs(const PolicyModel& policy,
                                          std::span<const BackwardStep> steps, std::size_t groups);

}  // namespace jebgfn::gfn
