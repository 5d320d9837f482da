#include <charconv>
#include <sstream>
#include <stdexcept>

#include "jebgfn/trainer.hpp"

namespace jebgfn::train {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

const char* schedule_name(energy::ScheduleKind k) {
  return k == energy::ScheduleKind::Constant ? "constant" : "linear-ramp";
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("config: iterations must be > 0");
  if (batch == 0) throw std::invalid_argument("config: batch must be > 0");
  if (!(policy_lr > 0) || !(energy_lr > 0) || !(log_z_lr > 0))
    throw std::invalid_argument("config: learning rates must be > 0");
  if (policy_l2 < 0 || energy_l2 < 0) throw std::invalid_argument("config: L2 coefficients must be >= 0");
  if (epsilon_start < 0 || epsilon_start >= 1 || epsilon_end < 0 || epsilon_end >= 1)
    throw std::invalid_argument("config: epsilon must lie in [0, 1)");
  if (k_min == 0 || (k_max != 0 && k_max < k_min)) throw std::invalid_argument("config: need 1 <= k_min <= k_max");
  if (policy_steps == 0 && energy_steps == 0) throw std::invalid_argument("config: nothing to train");
  if (policy.hidden == 0 || energy.hidden == 0) throw std::invalid_argument("config: hidden width must be > 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "iterations = " << iterations << '\n'
     << "batch = " << batch << '\n'
     << "policy_lr = " << policy_lr << '\n'
     << "energy_lr = " << energy_lr << '\n'
     << "log_z_lr = " << log_z_lr << '\n'
     << "policy_l2 = " << policy_l2 << '\n'
     << "energy_l2 = " << energy_l2 << '\n'
     << "epsilon_start = " << epsilon_start << '\n'
     << "epsilon_end = " << epsilon_end << '\n'
     << "k_schedule = " << schedule_name(k_kind) << '\n'
     << "k_min = " << k_min << '\n'
     << "k_max = " << k_max << '\n'
     << "mode = " << seq::to_string(mode) << '\n'
     << "seed = " << seed << '\n'
     << "policy_hidden = " << policy.hidden << '\n'
     << "policy_layers = " << policy.hidden_layers << '\n'
     << "learned_backward = " << (policy.learned_backward ? "true" : "false") << '\n'
     << "energy_encoding = " << energy::to_string(energy.encoding) << '\n'
     << "energy_hidden = " << energy.hidden << '\n'
     << "energy_layers = " << energy.hidden_layers << '\n'
     << "energy_embedding_dim = " << energy.embedding_dim << '\n'
     << "policy_steps = " << policy_steps << '\n'
     << "energy_steps = " << energy_steps << '\n'
     << "checkpoint_every = " << checkpoint_every << '\n'
     << "persistent_chains = " << (persistent_chains ? "true" : "false") << '\n';
  return os.str();
}

bool apply_config_entry(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "iterations") c.iterations = to_size(key, v);
  else if (key == "batch") c.batch = to_size(key, v);
  else if (key == "policy_lr") c.policy_lr = to_double(key, v);
  else if (key == "energy_lr") c.energy_lr = to_double(key, v);
  else if (key == "log_z_lr") c.log_z_lr = to_double(key, v);
  else if (key == "policy_l2") c.policy_l2 = to_double(key, v);
  else if (key == "energy_l2") c.energy_l2 = to_double(key, v);
  else if (key == "epsilon_start") c.epsilon_start = to_double(key, v);
  else if (key == "epsilon_end") c.epsilon_end = to_double(key, v);
  else if (key == "k_schedule") {
    if (v == "linear-ramp") c.k_kind = energy::ScheduleKind::LinearRamp;
    else if (v == "constant") c.k_kind = energy::ScheduleKind::Constant;
    else bad_value(key, v);
  } else if (key == "k_min") c.k_min = to_size(key, v);
  else if (key == "k_max") c.k_max = to_size(key, v);
  else if (key == "mode") c.mode = seq::parse_mode(v);
  else if (key == "seed") c.seed = to_size(key, v);
  else if (key == "policy_hidden") c.policy.hidden = to_size(key, v);
  else if (key == "policy_layers") c.policy.hidden_layers = to_size(key, v);
  else if (key == "learned_backward") c.policy.learned_backward = to_bool(key, v);
  else if (key == "energy_encoding") c.energy.encoding = energy::parse_encoding(v);
  else if (key == "energy_hidden") c.energy.hidden = to_size(key, v);
  else if (key == "energy_layers") c.energy.hidden_layers = to_size(key, v);
  else if (key == "energy_embedding_dim") c.energy.embedding_dim = to_size(key, v);
  else if (key == "policy_steps") c.policy_steps = to_size(key, v);
  else if (key == "energy_steps") c.energy_steps = to_size(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = to_size(key, v);
  else if (key == "persistent_chains") c.persistent_chains = to_bool(key, v);
  else return false;
  return true;
}

}  // namespace jebgfn::train
