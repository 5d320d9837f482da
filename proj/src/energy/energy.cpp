#include "jebgfn/energy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "jebgfn/ndmath/ops.hpp"

namespace jebgfn::energy {

using seq::Action;
using seq::Mode;
using seq::State;

std::vector<double> EnergyFunction::energy_values(std::span<const State> states) const {
  nd::NoGradScope no_grad;
  const nd::Tensor e = energies(states);
  return {e.values().begin(), e.values().end()};
}

const char* to_string(Encoding e) { return e == Encoding::OneHot ? "onehot" : "embedding"; }

Encoding parse_encoding(const std::string& s) {
  if (s == "onehot") return Encoding::OneHot;
  if (s == "embedding") return Encoding::Embedding;
  throw std::invalid_argument("unknown energy encoding '" + s + "'");
}

EnergyModel::EnergyModel(seq::LayoutPtr layout, EnergyConfig config, std::uint64_t seed)
    : layout_(std::move(layout)), config_(config) {
  if (!layout_) throw std::invalid_argument("EnergyModel: null layout");
  layout_->validate();
  if (config_.hidden == 0 || config_.hidden_layers == 0 || config_.embedding_dim == 0)
    throw std::invalid_argument("EnergyModel: sizes must be positive");
  nd::Rng rng(seed);
  const std::size_t slots = layout_->slot_count();
  const std::size_t h = config_.hidden;
  std::vector<std::size_t> widths;
  if (config_.encoding == Encoding::OneHot) {
    const std::size_t width = layout_->max_vocab() + 1;
    input_table_ = params_.add("input.weight", nd::init_uniform({slots * width, h}, slots * width, rng));
    input_bias_ = params_.add("input.bias", nd::init_uniform({h}, slots * width, rng));
    widths.assign(config_.hidden_layers, h);
  } else {
    // x tokens, then label tokens, then one shared padding id.
    const std::size_t vocab = layout_->slot_vocab(0) + layout_->label_vocab * (layout_->label_slots > 0) + 1;
    const std::size_t d = config_.embedding_dim;
    input_table_ = params_.add("tokens", nd::init_uniform({vocab, d}, 1, rng));
    positions_ = params_.add("positions", nd::init_uniform({slots, d}, 1, rng));
    widths.push_back(d);
    for (std::size_t i = 0; i < config_.hidden_layers; ++i) widths.push_back(h);
  }
  widths.push_back(1);
  trunk_ = nd::Mlp::make(params_, "trunk", widths, rng);
}

nd::Tensor EnergyModel::energy(const State& terminal) const {
  return nd::reshape(energies(std::span<const State>(&terminal, 1)), {});
}

nd::Tensor EnergyModel::energies(std::span<const State> states) const {
  if (states.empty()) throw std::invalid_argument("energies: empty batch");
  const std::size_t slots = layout_->slot_count();
  std::vector<std::size_t> idx(states.size() * slots);
  const std::size_t x_ids = layout_->slot_vocab(0);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!states[i].is_terminal()) throw std::invalid_argument("energy is defined only on terminal states");
    const auto tokens = states[i].tokens();
    for (std::size_t s = 0; s < slots; ++s) {
      const int t = tokens[s];
      std::size_t id;
      if (config_.encoding == Encoding::OneHot) {
        const std::size_t width = layout_->max_vocab() + 1;
        id = s * width + (t == seq::kUnset ? width - 1 : static_cast<std::size_t>(t));
      } else if (t == seq::kUnset) {
        id = input_table_.dim(0) - 1;
      } else {
        id = layout_->is_label_slot(s) ? x_ids + static_cast<std::size_t>(t) : static_cast<std::size_t>(t);
      }
      idx[i * slots + s] = id;
    }
  }
  nd::Tensor h;
  if (config_.encoding == Encoding::OneHot) {
    h = nd::relu(nd::add_bias(nd::embedding_bag(input_table_, idx, slots), input_bias_));
  } else {
    std::vector<std::size_t> pos(idx.size());
    for (std::size_t k = 0; k < pos.size(); ++k) pos[k] = k % slots;
    // tanh keeps the pooled features centred; with relu every feature has a
    // large positive common mode and the trunk units die together.
    const nd::Tensor per_slot =
        nd::tanh(nd::add(nd::embedding_lookup(input_table_, idx), nd::embedding_lookup(positions_, pos)));
    h = nd::group_sum(per_slot, slots);
  }
  return nd::reshape(trunk_(h), {states.size()});
}

TableEnergy::TableEnergy(seq::LayoutPtr layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (layout_->variable_length) throw std::invalid_argument("TableEnergy: needs a fixed-length layout");
  std::size_t count = 1;
  for (std::size_t s = 0; s < layout_->slot_count(); ++s) count *= layout_->slot_vocab(s);
  if (values_.size() != count)
    throw std::invalid_argument("TableEnergy: one value per terminal required");
}

nd::Tensor TableEnergy::energies(std::span<const State> states) const {
  std::vector<double> out;
  out.reserve(states.size());
  for (const State& s : states) out.push_back(values_[seq::terminal_index(*layout_, s.tokens())]);
  return nd::Tensor::constant({states.size()}, std::move(out));
}

void KSchedule::validate(std::size_t slot_count) const {
  if (k_min < 1 || k_min > k_max || k_max > slot_count)
    throw std::invalid_argument("KSchedule: need 1 <= k_min <= k_max <= slot count");
  if (total == 0) throw std::invalid_argument("KSchedule: total iterations must be > 0");
}

std::size_t k_for_iteration(const KSchedule& schedule, std::size_t i) {
  if (i >= schedule.total) throw std::out_of_range("k_for_iteration: iteration out of range");
  if (schedule.kind == ScheduleKind::Constant) return schedule.k_max;
  const double progress = std::min(1.0, static_cast<double>(i) / (0.5 * static_cast<double>(schedule.total)));
  const double raw = static_cast<double>(schedule.k_min) +
                     static_cast<double>(schedule.k_max - schedule.k_min) * progress;
  const auto k = static_cast<std::size_t>(std::llround(raw));
  return std::clamp(k, schedule.k_min, schedule.k_max);
}

std::string ProposalRecord::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "origin=" << seq::serialize_terminal(origin) << " candidate=" << seq::serialize_terminal(candidate)
     << " intermediate_set=" << intermediate.set_count() << " log_pb_tau=" << log_pb_tau
     << " log_pf_tau_prime=" << log_pf_tau_prime << " log_pb_tau_prime=" << log_pb_tau_prime
     << " log_pf_tau=" << log_pf_tau << " energy_origin=" << energy_origin
     << " energy_candidate=" << energy_candidate << " log_ratio=" << log_ratio
     << " acceptance=" << acceptance << " accepted=" << (accepted ? 1 : 0);
  return os.str();
}

std::vector<ProposalRecord> propose_back_forth(const EnergyFunction& energy, const gfn::PolicyModel& policy,
                                               std::span<const State> terminals, std::size_t k,
                                               nd::Rng& rng) {
  nd::NoGradScope no_grad;
  const std::size_t n = terminals.size();
  const std::size_t slots = policy.layout().slot_count();
  if (k < 1 || k > slots) throw std::out_of_range("propose_back_forth: K must be in [1, slot count]");
  for (const State& t : terminals)
    if (!t.is_terminal()) throw std::invalid_argument("propose_back_forth: origin must be terminal");

  // Backward paths, stored from the origin downward.
  std::vector<std::vector<State>> down(n);
  std::vector<std::vector<std::size_t>> down_slots(n);
  std::vector<double> log_pb_tau(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) down[i].push_back(terminals[i]);

  if (policy.mode() == Mode::Prefix) {
    // Depth is measured in generation-order positions, padding included.
    const std::size_t depth = slots - k;
    const auto& order = policy.layout().generation_order();
    std::vector<std::size_t> position(slots);
    for (std::size_t p = 0; p < order.size(); ++p) position[order[p]] = p;
    for (std::size_t i = 0; i < n; ++i) {
      for (;;) {
        const auto slot = down[i].back().last_prefix_slot();
        if (!slot || position[*slot] < depth) break;
        down[i].push_back(seq::apply_backward(down[i].back(), Action{*slot, seq::kUnset}));
        down_slots[i].push_back(*slot);
      }
    }
  } else {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t step = 0; step < k; ++step) {
      std::vector<State> batch;
      for (std::size_t i = 0; i < n; ++i) batch.push_back(down[i].back());
      const nd::Tensor lp = policy.backward_logprobs(batch);
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = lp.values().subspan(i * slots, slots);
        const double u = unit(rng);
        double acc = 0.0;
        std::size_t pick = slots, last_valid = slots;
        for (std::size_t s = 0; s < slots; ++s) {
          if (row[s] == nd::kMaskedLogProb) continue;
          last_valid = s;
          acc += std::exp(row[s]);
          if (u < acc) {
            pick = s;
            break;
          }
        }
        if (pick == slots) pick = last_valid;
        log_pb_tau[i] += row[pick];
        down[i].push_back(seq::apply_backward(down[i].back(), Action{pick, seq::kUnset}));
        down_slots[i].push_back(pick);
      }
    }
  }

  std::vector<State> intermediates;
  for (std::size_t i = 0; i < n; ++i) intermediates.push_back(down[i].back());
  const std::vector<seq::Trajectory> forward = gfn::rollout_from(policy, intermediates, 0.0, rng);

  // log P_F(tau): forward probability of climbing back from the
  // intermediate state to the origin.
  std::vector<gfn::ForwardStep> f_steps;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = down[i].size() - 1; j-- > 0;) {
      const std::size_t slot = down_slots[i][j];
      f_steps.push_back({&down[i][j + 1], Action{slot, down[i][j].token(slot)}, i});
    }
  const std::vector<double> log_pf_tau =
      f_steps.empty() ? std::vector<double>(n, 0.0) : gfn::sum_forward_logprobs(policy, f_steps, n);

  std::vector<double> log_pb_tau_prime(n, 0.0);
  if (policy.mode() == Mode::AnyOrder) {
    std::vector<gfn::BackwardStep> b_steps;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < forward[i].length(); ++t)
        b_steps.push_back({&forward[i].states[t + 1], forward[i].actions[t].slot, i});
    if (!b_steps.empty()) log_pb_tau_prime = gfn::sum_backward_logprobs(policy, b_steps, n);
  }

  std::vector<State> candidates;
  for (const auto& t : forward) candidates.push_back(t.terminal());
  const std::vector<double> e_origin = energy.energy_values(terminals);
  const std::vector<double> e_candidate = energy.energy_values(candidates);

  std::vector<ProposalRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ProposalRecord r{terminals[i], intermediates[i], candidates[i]};
    r.log_pb_tau = log_pb_tau[i];
    r.log_pf_tau_prime = forward[i].sum_forward();
    r.log_pb_tau_prime = log_pb_tau_prime[i];
    r.log_pf_tau = log_pf_tau[i];
    r.energy_origin = e_origin[i];
    r.energy_candidate = e_candidate[i];
    score_proposal(r);
    out.push_back(std::move(r));
  }
  return out;
}

ProposalRecord propose_back_forth(const EnergyFunction& energy, const gfn::PolicyModel& policy,
                                  const State& terminal, std::size_t k, std::uint64_t seed) {
  nd::Rng rng(seed);
  return propose_back_forth(energy, policy, std::span<const State>(&terminal, 1), k, rng).front();
}

void score_proposal(ProposalRecord& r) {
  for (double v : {r.log_pb_tau, r.log_pf_tau_prime, r.log_pb_tau_prime, r.log_pf_tau, r.energy_origin,
                   r.energy_candidate})
    if (!std::isfinite(v)) throw std::domain_error("mh: non-finite proposal term");
  // Target times reverse-move probability over target times forward-move
  // probability; the forward move is P_B(tau | x, y) P_F(tau').
  r.log_ratio = (-r.energy_candidate + r.log_pb_tau_prime + r.log_pf_tau) -
                (-r.energy_origin + r.log_pb_tau + r.log_pf_tau_prime);
  r.acceptance = std::exp(std::min(0.0, r.log_ratio));
}

bool mh_accept(ProposalRecord& record, nd::Rng& rng) {
  score_proposal(record);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  record.accepted = unit(rng) < record.acceptance;
  return record.accepted;
}

bool mh_accept(ProposalRecord& record, std::uint64_t seed) {
  nd::Rng rng(seed);
  return mh_accept(record, rng);
}

nd::Tensor cd_objective(const EnergyFunction& energy, std::span<const State> positives,
                        std::span<const State> negatives) {
  if (positives.empty() || negatives.empty()) throw std::invalid_argument("cd_update: empty batch");
  if (positives.size() != negatives.size())
    throw std::invalid_argument("cd_update: positive and negative batches differ in size");
  return nd::sub(nd::mean(energy.energies(positives)), nd::mean(energy.energies(negatives)));
}

CdStats cd_update(EnergyFunction& energy, std::span<const State> positives, std::span<const State> negatives,
                  nd::AdamState& optimizer) {
  if (positives.empty() || negatives.empty()) throw std::invalid_argument("cd_update: empty batch");
  if (positives.size() != negatives.size())
    throw std::invalid_argument("cd_update: positive and negative batches differ in size");
  nd::Tape tape;
  CdStats stats;
  {
    nd::TapeScope scope(tape);
    const nd::Tensor pos = nd::mean(energy.energies(positives));
    const nd::Tensor neg = nd::mean(energy.energies(negatives));
    stats.mean_positive = pos.item();
    stats.mean_negative = neg.item();
    tape.backward(nd::sub(pos, neg));
  }
  nd::adam_step(energy.params(), optimizer);
  return stats;
}

}  // namespace jebgfn::energy
