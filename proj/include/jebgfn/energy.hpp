#pragma once

// Joint energy model E(x, y), contrastive-divergence updates and the
// back-and-forth GFlowNet proposal with Metropolis-Hastings acceptance.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jebgfn/ndmath/adam.hpp"
#include "jebgfn/ndmath/nn.hpp"
#include "jebgfn/policy.hpp"
#include "jebgfn/seqspace.hpp"

namespace jebgfn::energy {

/// Log-rewards handed to the GFlowNet never drop below this.
inline constexpr double kLogRewardFloor = -80.0;

inline double log_reward_from_energy(double e) { return -e < kLogRewardFloor ? kLogRewardFloor : -e; }

/// Anything that scores complete states and owns learnable parameters.
class EnergyFunction {
 public:
  virtual ~EnergyFunction() = default;
  /// [B] energies, recorded on the active tape if any.
  virtual nd::Tensor energies(std::span<const seq::State> states) const = 0;
  virtual nd::ParamSet& params() = 0;
  virtual const nd::ParamSet& params() const = 0;

  std::vector<double> energy_values(std::span<const seq::State> states) const;
};

enum class Encoding {
  OneHot,     // concatenated one-hot slots into the first hidden layer
  Embedding,  // learned token + positional embeddings, per-slot tanh, summed
};

const char* to_string(Encoding e);
Encoding parse_encoding(const std::string& s);

struct EnergyConfig {
  Encoding encoding = Encoding::OneHot;
  std::size_t hidden = 256;
  std::size_t hidden_layers = 3;
  std::size_t embedding_dim = 256;
};

class EnergyModel final : public EnergyFunction {
 public:
  EnergyModel(seq::LayoutPtr layout, EnergyConfig config, std::uint64_t seed);

  const seq::JointLayout& layout() const { return *layout_; }
  const EnergyConfig& config() const { return config_; }

  nd::Tensor energy(const seq::State& terminal) const;
  nd::Tensor energies(std::span<const seq::State> states) const override;
  nd::ParamSet& params() override { return params_; }
  const nd::ParamSet& params() const override { return params_; }
  void zero_parameters() { params_.fill(0.0); }

 private:
  seq::LayoutPtr layout_;
  EnergyConfig config_;
  nd::ParamSet params_;
  nd::Tensor input_table_;  // one-hot weight or token embeddings
  nd::Tensor input_bias_;   // one-hot only
  nd::Tensor positions_;    // embedding only, [slots, dim]
  nd::Mlp trunk_;           // ends with the scalar head
};

/// Fixed energies of a fixed-length layout, indexed like enumerate_terminals.
class TableEnergy final : public EnergyFunction {
 public:
  TableEnergy(seq::LayoutPtr layout, std::vector<double> values);
  const std::vector<double>& values() const { return values_; }
  nd::Tensor energies(std::span<const seq::State> states) const override;
  nd::ParamSet& params() override { return params_; }
  const nd::ParamSet& params() const override { return params_; }

 private:
  seq::LayoutPtr layout_;
  std::vector<double> values_;
  nd::ParamSet params_;  // empty
};

enum class ScheduleKind { LinearRamp, Constant };

struct KSchedule {
  ScheduleKind kind = ScheduleKind::LinearRamp;
  std::size_t k_min = 1;
  std::size_t k_max = 1;
  std::size_t total = 1;

  void validate(std::size_t slot_count) const;
};

/// LINEAR_RAMP: round(k_min + (k_max - k_min) * min(1, i / (total / 2))).
std::size_t k_for_iteration(const KSchedule& schedule, std::size_t i);

struct ProposalRecord {
  seq::State origin;
  seq::State intermediate;
  seq::State candidate;
  double log_pb_tau = 0.0;         // log P_B(tau | x, y)
  double log_pf_tau_prime = 0.0;   // log P_F(tau')
  double log_pb_tau_prime = 0.0;   // log P_B(tau' | x', y')
  double log_pf_tau = 0.0;         // log P_F(tau)
  double energy_origin = 0.0;
  double energy_candidate = 0.0;
  double log_ratio = 0.0;
  double acceptance = 0.0;
  bool accepted = false;

  /// One line of "key=value" pairs for MCMC diagnostics.
  std::string to_text() const;
};

/// Backward K steps from each terminal, then forward regeneration to a new
/// terminal, with every log-probability term evaluated under the current
/// policy. In prefix mode the K backward steps count padded slots, so the
/// intermediate state is the terminal truncated to depth slot_count - K.
std::vector<ProposalRecord> propose_back_forth(const EnergyFunction& energy,
                                               const gfn::PolicyModel& policy,
                                               std::span<const seq::State> terminals,
                                               std::size_t k, nd::Rng& rng);
ProposalRecord propose_back_forth(const EnergyFunction& energy, const gfn::PolicyModel& policy,
                                  const seq::State& terminal, std::size_t k, std::uint64_t seed);

/// Fills log_ratio/acceptance from the record's terms (log domain).
void score_proposal(ProposalRecord& record);
/// Accepts with probability min(1, ratio); sets `accepted` and returns it.
bool mh_accept(ProposalRecord& record, nd::Rng& rng);
bool mh_accept(ProposalRecord& record, std::uint64_t seed);

struct CdStats {
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  double gap() const { return mean_positive - mean_negative; }
};

/// Steps the energy parameters along grad[mean E(pos) - mean E(neg)].
CdStats cd_update(EnergyFunction& energy, std::span<const seq::State> positives,
                  std::span<const seq::State> negatives, nd::AdamState& optimizer);

/// Loss whose gradient is the contrastive-divergence direction; the caller
/// runs backward. Exposed for gradient checks.
nd::Tensor cd_objective(const EnergyFunction& energy, std::span<const seq::State> positives,
                        std::span<const seq::State> negatives);

}  // namespace jebgfn::energy
