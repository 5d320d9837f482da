#include "jebgfn/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "jebgfn/ndmath/ops.hpp"

namespace jebgfn::gfn {

using seq::Action;
using seq::Mode;
using seq::State;
using seq::Trajectory;

PolicyModel::PolicyModel(seq::LayoutPtr layout, Mode mode, PolicyConfig config, std::uint64_t seed)
    : layout_(std::move(layout)), mode_(mode), config_(config) {
  if (!layout_) throw std::invalid_argument("PolicyModel: null layout");
  layout_->validate();
  if (mode_ == Mode::AnyOrder && layout_->variable_length)
    throw std::invalid_argument("PolicyModel: any-order generation requires a fixed-length layout");
  if (config_.hidden == 0 || config_.hidden_layers == 0)
    throw std::invalid_argument("PolicyModel: hidden sizes must be positive");
  nd::Rng rng(seed);
  const std::size_t slots = layout_->slot_count();
  const std::size_t width = layout_->max_vocab() + 1;
  const std::size_t h = config_.hidden;
  encoder_ = params_.add("encoder.weight", nd::init_uniform({slots * width, h}, slots * width, rng));
  encoder_bias_ = params_.add("encoder.bias", nd::init_uniform({h}, slots * width, rng));
  std::vector<std::size_t> widths(config_.hidden_layers, h);
  if (config_.hidden_layers > 1) trunk_ = nd::Mlp::make(params_, "trunk", widths, rng);
  forward_head_ = nd::Linear::make(params_, "forward_head", h, forward_width(), rng);
  if (config_.learned_backward && mode_ == Mode::AnyOrder)
    backward_head_ = nd::Linear::make(params_, "backward_head", h, slots, rng);
  log_z_ = params_.add("log_z", nd::Tensor::parameter({1}, {0.0}));
}

std::size_t PolicyModel::forward_width() const {
  return mode_ == Mode::Prefix ? layout_->max_vocab() : layout_->slot_count() * layout_->max_vocab();
}

std::size_t PolicyModel::action_column(const Action& a) const {
  if (a.token < 0) throw std::invalid_argument("action_column: forward action needs a token");
  const auto t = static_cast<std::size_t>(a.token);
  return mode_ == Mode::Prefix ? t : a.slot * layout_->max_vocab() + t;
}

Action PolicyModel::action_at(const State& s, std::size_t column) const {
  if (mode_ == Mode::Prefix) {
    const auto slot = s.next_prefix_slot();
    if (!slot) throw std::logic_error("action_at: terminal state");
    return {*slot, static_cast<int>(column)};
  }
  const std::size_t v = layout_->max_vocab();
  return {column / v, static_cast<int>(column % v)};
}

std::vector<std::uint8_t> PolicyModel::forward_mask(std::span<const State> states) const {
  const std::size_t width = forward_width();
  std::vector<std::uint8_t> mask(states.size() * width, 0);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto actions = states[i].forward_actions();
    if (actions.empty()) throw std::logic_error("forward policy evaluated on a terminal state");
    for (const Action& a : actions) mask[i * width + action_column(a)] = 1;
  }
  return mask;
}

std::vector<std::size_t> PolicyModel::encode(std::span<const State> states) const {
  const std::size_t slots = layout_->slot_count();
  const std::size_t width = layout_->max_vocab() + 1;
  std::vector<std::size_t> idx(states.size() * slots);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto tokens = states[i].tokens();
    for (std::size_t s = 0; s < slots; ++s) {
      const int t = tokens[s];
      idx[i * slots + s] = s * width + (t == seq::kUnset ? width - 1 : static_cast<std::size_t>(t));
    }
  }
  return idx;
}

nd::Tensor PolicyModel::trunk(std::span<const State> states) const {
  const auto idx = encode(states);
  nd::Tensor h = nd::relu(nd::add_bias(nd::embedding_bag(encoder_, idx, layout_->slot_count()), encoder_bias_));
  if (!trunk_.layers.empty()) h = nd::relu(trunk_(h));
  return h;
}

nd::Tensor PolicyModel::forward_logprobs(std::span<const State> states) const {
  if (states.empty()) throw std::invalid_argument("forward_logprobs: empty batch");
  const auto mask = forward_mask(states);
  return nd::masked_log_softmax(forward_head_(trunk(states)), mask);
}

nd::Tensor PolicyModel::backward_logprobs(std::span<const State> states) const {
  if (states.empty()) throw std::invalid_argument("backward_logprobs: empty batch");
  const std::size_t slots = layout_->slot_count();
  std::vector<std::uint8_t> mask(states.size() * slots, 0);
  std::vector<double> uniform(states.size() * slots, nd::kMaskedLogProb);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto actions = states[i].backward_actions();
    if (actions.empty()) throw std::logic_error("backward policy evaluated on s_0");
    const double lp = -std::log(static_cast<double>(actions.size()));
    for (const Action& a : actions) {
      mask[i * slots + a.slot] = 1;
      uniform[i * slots + a.slot] = lp;
    }
  }
  if (backward_head_) return nd::masked_log_softmax((*backward_head_)(trunk(states)), mask);
  return nd::Tensor::constant({states.size(), slots}, std::move(uniform));
}

double PolicyModel::backward_logprob_step(const State& child, std::size_t slot) const {
  nd::NoGradScope no_grad;
  const nd::Tensor lp = backward_logprobs(std::span<const State>(&child, 1));
  const double v = lp.at(slot);
  if (v == nd::kMaskedLogProb) throw std::logic_error("backward action not valid for state");
  return v;
}

std::vector<std::pair<Action, double>> PolicyModel::forward_step_logprobs(const State& state) const {
  if (state.is_terminal()) throw std::logic_error("forward_step_logprobs: state is terminal");
  nd::NoGradScope no_grad;
  const nd::Tensor lp = forward_logprobs(std::span<const State>(&state, 1));
  std::vector<std::pair<Action, double>> out;
  for (const Action& a : state.forward_actions()) out.emplace_back(a, lp.at(action_column(a)));
  return out;
}

void PolicyModel::zero_parameters() { params_.fill(0.0); }

namespace {

std::size_t sample_column(std::span<const double> row, double epsilon, double temperature, nd::Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> valid;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (row[j] != nd::kMaskedLogProb) valid.push_back(j);
  if (epsilon > 0.0 && unit(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    return valid[pick(rng)];
  }
  if (temperature != 1.0) {
    std::vector<double> w;
    w.reserve(valid.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j : valid) top = std::max(top, row[j]);
    for (std::size_t j : valid) w.push_back(std::exp((row[j] - top) / temperature));
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    return valid[pick(rng)];
  }
  const double u = unit(rng);
  double acc = 0.0;
  for (std::size_t j : valid) {
    acc += std::exp(row[j]);
    if (u < acc) return j;
  }
  return valid.back();
}

}  // namespace

std::vector<Trajectory> rollout_from(const PolicyModel& policy, std::vector<State> starts, double epsilon,
                                     nd::Rng& rng, double temperature) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("rollout: epsilon must be in [0, 1)");
  if (!(temperature > 0.0 && std::isfinite(temperature)))
    throw std::invalid_argument("rollout: temperature must be positive");
  nd::NoGradScope no_grad;
  const std::size_t count = starts.size();
  std::vector<Trajectory> trajs(count);
  std::vector<State> current = std::move(starts);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < count; ++i) {
    trajs[i].states.push_back(current[i]);
    if (current[i].is_terminal()) trajs[i].complete = true;
    else active.push_back(i);
  }

  const std::size_t width = policy.forward_width();
  const std::size_t slots = policy.layout().slot_count();
  while (!active.empty()) {
    std::vector<State> batch;
    batch.reserve(active.size());
    for (std::size_t i : active) batch.push_back(current[i]);
    const nd::Tensor lp = policy.forward_logprobs(batch);
    std::vector<State> children;
    children.reserve(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      std::span<const double> row = lp.values().subspan(k * width, width);
      const std::size_t col = sample_column(row, epsilon, temperature, rng);
      const Action a = policy.action_at(current[i], col);
      current[i] = seq::apply_forward(current[i], a);
      trajs[i].actions.push_back(a);
      trajs[i].forward_logprobs.push_back(row[col]);
      trajs[i].states.push_back(current[i]);
      children.push_back(current[i]);
    }
    const nd::Tensor blp = policy.backward_logprobs(children);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      trajs[i].backward_logprobs.push_back(blp.at(k * slots + trajs[i].actions.back().slot));
      if (current[i].is_terminal()) trajs[i].complete = true;
      else still.push_back(i);
    }
    active = std::move(still);
  }
  return trajs;
}

std::vector<Trajectory> sample_trajectories(const PolicyModel& policy, std::size_t count,
                                            const RolloutConfig& config, nd::Rng& rng) {
  State start = State::initial(policy.layout_ptr(), policy.mode());
  if (config.clamped_labels) start = seq::clamp_labels(start, *config.clamped_labels);
  return rollout_from(policy, std::vector<State>(count, start), config.epsilon, rng, config.temperature);
}

Trajectory sample_trajectory(const PolicyModel& policy, const RolloutConfig& config) {
  nd::Rng rng(config.seed);
  return sample_trajectories(policy, 1, config, rng).front();
}

std::vector<double> sum_forward_logprobs(const PolicyModel& policy, std::span<const ForwardStep> steps,
                                         std::size_t groups) {
  nd::NoGradScope no_grad;
  std::vector<double> out(groups, 0.0);
  constexpr std::size_t kChunk = 4096;
  const std::size_t width = policy.forward_width();
  for (std::size_t lo = 0; lo < steps.size(); lo += kChunk) {
    const std::size_t hi = std::min(steps.size(), lo + kChunk);
    std::vector<State> states;
    states.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) states.push_back(*steps[i].state);
    const nd::Tensor lp = policy.forward_logprobs(states);
    for (std::size_t i = lo; i < hi; ++i) {
      const double v = lp.at((i - lo) * width + policy.action_column(steps[i].action));
      if (v == nd::kMaskedLogProb) throw std::logic_error("sum_forward_logprobs: invalid action on path");
      out.at(steps[i].group) += v;
    }
  }
  return out;
}

std::vector<double> sum_backward_logprobs(const PolicyModel& policy, std::span<const BackwardStep> steps,
                                          std::size_t groups) {
  nd::NoGradScope no_grad;
  std::vector<double> out(groups, 0.0);
  constexpr std::size_t kChunk = 4096;
  const std::size_t slots = policy.layout().slot_count();
  for (std::size_t lo = 0; lo < steps.size(); lo += kChunk) {
    const std::size_t hi = std::min(steps.size(), lo + kChunk);
    std::vector<State> states;
    states.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) states.push_back(*steps[i].child);
    const nd::Tensor lp = policy.backward_logprobs(states);
    for (std::size_t i = lo; i < hi; ++i) {
      const double v = lp.at((i - lo) * slots + steps[i].slot);
      if (v == nd::kMaskedLogProb) throw std::logic_error("sum_backward_logprobs: invalid action on path");
      out.at(steps[i].group) += v;
    }
  }
  return out;
}

double forward_logprob(const PolicyModel& policy, const Trajectory& traj) {
  if (traj.length() == 0) return 0.0;
  std::vector<ForwardStep> steps;
  for (std::size_t t = 0; t < traj.length(); ++t) steps.push_back({&traj.states[t], traj.actions[t], 0});
  return sum_forward_logprobs(policy, steps, 1)[0];
}

double backward_logprob(const PolicyModel& policy, const Trajectory& traj) {
  if (policy.mode() == Mode::Prefix || traj.length() == 0) return 0.0;
  std::vector<BackwardStep> steps;
  for (std::size_t t = 0; t < traj.length(); ++t)
    steps.push_back({&traj.states[t + 1], traj.actions[t].slot, 0});
  return sum_backward_logprobs(policy, steps, 1)[0];
}

nd::Tensor tb_loss(const PolicyModel& policy, const Trajectory& traj, double log_reward) {
  return tb_loss_batch(policy, std::span<const Trajectory>(&traj, 1), std::span<const double>(&log_reward, 1));
}

nd::Tensor tb_loss_batch(const PolicyModel& policy, std::span<const Trajectory> trajs,
                         std::span<const double> log_rewards) {
  if (trajs.empty() || trajs.size() != log_rewards.size())
    throw std::invalid_argument("tb_loss_batch: need one log-reward per trajectory");
  const std::size_t n = trajs.size();
  std::vector<State> parents_states, child_states;
  std::vector<std::size_t> fwd_cols, back_slots, group;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& tr = trajs[i];
    if (!tr.terminal().is_terminal()) throw std::invalid_argument("tb_loss: trajectory is not complete");
    if (!std::isfinite(log_rewards[i])) throw std::domain_error("tb_loss: non-finite log-reward");
    for (std::size_t t = 0; t < tr.length(); ++t) {
      parents_states.push_back(tr.states[t]);
      child_states.push_back(tr.states[t + 1]);
      fwd_cols.push_back(policy.action_column(tr.actions[t]));
      back_slots.push_back(tr.actions[t].slot);
      group.push_back(i);
    }
  }
  if (parents_states.empty()) throw std::invalid_argument("tb_loss: empty trajectories");

  const nd::Tensor fwd = nd::gather_columns(policy.forward_logprobs(parents_states), fwd_cols);
  const nd::Tensor sum_fwd = nd::segment_sum(fwd, group, n);
  const nd::Tensor bwd = nd::gather_columns(policy.backward_logprobs(child_states), back_slots);
  const nd::Tensor sum_bwd = nd::segment_sum(bwd, group, n);

  const std::vector<std::size_t> zeros(n, 0);
  const nd::Tensor log_z =
      nd::reshape(nd::embedding_lookup(nd::reshape(policy.log_z_tensor(), {1, 1}), zeros), {n});
  const nd::Tensor rewards = nd::Tensor::constant({n}, {log_rewards.begin(), log_rewards.end()});
  const nd::Tensor residual = nd::sub(nd::sub(nd::add(log_z, sum_fwd), rewards), sum_bwd);
  return nd::mean(nd::square(residual));
}

namespace {

// Forward log-probability rows for many states, evaluated in bounded chunks.
std::vector<double> forward_rows(const PolicyModel& policy, const std::vector<State>& states) {
  constexpr std::size_t kChunk = 4096;
  std::vector<double> out;
  out.reserve(states.size() * policy.forward_width());
  for (std::size_t lo = 0; lo < states.size(); lo += kChunk) {
    const std::size_t hi = std::min(states.size(), lo + kChunk);
    const nd::Tensor lp = policy.forward_logprobs(std::span<const State>(states.data() + lo, hi - lo));
    out.insert(out.end(), lp.values().begin(), lp.values().end());
  }
  return out;
}

}  // namespace

std::vector<double> exact_terminal_distribution(const PolicyModel& policy, std::size_t cap) {
  const seq::JointLayout& layout = policy.layout();
  const std::size_t terminals = seq::enumerate_terminals(layout, cap).size();
  std::vector<double> out(terminals, 0.0);
  nd::NoGradScope no_grad;
  const std::size_t width = policy.forward_width();

  if (policy.mode() == Mode::Prefix) {
    std::vector<State> level{State::initial(policy.layout_ptr(), Mode::Prefix)};
    std::vector<double> prob{1.0};
    while (!level.empty()) {
      const std::vector<double> lp = forward_rows(policy, level);
      std::vector<State> next;
      std::vector<double> next_prob;
      for (std::size_t i = 0; i < level.size(); ++i)
        for (const Action& a : level[i].forward_actions()) {
          State child = seq::apply_forward(level[i], a);
          const double p = prob[i] * std::exp(lp[i * width + policy.action_column(a)]);
          if (child.is_terminal()) {
            out[seq::terminal_index(layout, child.tokens())] += p;
          } else {
            next.push_back(std::move(child));
            next_prob.push_back(p);
          }
        }
      level = std::move(next);
      prob = std::move(next_prob);
    }
    return out;
  }

  // Any-order: propagate probability mass level by level over all partial
  // assignments, indexed in mixed radix with digit 0 meaning UNSET.
  const std::size_t slots = layout.slot_count();
  std::vector<std::size_t> radix(slots);
  std::size_t states_total = 1;
  for (std::size_t s = slots; s-- > 0;) {
    radix[s] = states_total;
    const std::size_t d = layout.slot_vocab(s) + 1;
    if (states_total > cap / d) throw std::length_error("exact_terminal_distribution: space exceeds cap");
    states_total *= d;
  }
  std::map<std::size_t, double> frontier{{0, 1.0}};
  State s0 = State::initial(policy.layout_ptr(), Mode::AnyOrder);
  auto decode = [&](std::size_t index) {
    State s = s0;
    for (std::size_t slot = 0; slot < slots; ++slot) {
      const std::size_t digit = (index / radix[slot]) % (layout.slot_vocab(slot) + 1);
      if (digit != 0) s = seq::apply_forward(s, Action{slot, static_cast<int>(digit - 1)});
    }
    return s;
  };
  for (std::size_t depth = 0; depth < slots; ++depth) {
    std::vector<State> level;
    std::vector<std::size_t> index;
    std::vector<double> prob;
    for (const auto& [idx, p] : frontier) {
      level.push_back(decode(idx));
      index.push_back(idx);
      prob.push_back(p);
    }
    const std::vector<double> lp = forward_rows(policy, level);
    std::map<std::size_t, double> next;
    for (std::size_t i = 0; i < level.size(); ++i)
      for (const Action& a : level[i].forward_actions())
        next[index[i] + static_cast<std::size_t>(a.token + 1) * radix[a.slot]] +=
            prob[i] * std::exp(lp[i * width + policy.action_column(a)]);
    frontier = std::move(next);
  }
  for (const auto& [idx, p] : frontier) {
    const State t = decode(idx);
    out[seq::terminal_index(layout, t.tokens())] += p;
  }
  return out;
}

}  // namespace jebgfn::gfn
