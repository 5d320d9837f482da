#include "jebgfn/seqspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace jebgfn::seq {

const char* to_string(Mode m) { return m == Mode::Prefix ? "prefix" : "any-order"; }

Mode parse_mode(const std::string& s) {
  if (s == "prefix") return Mode::Prefix;
  if (s == "any-order") return Mode::AnyOrder;
  throw std::invalid_argument("unknown generation mode '" + s + "'");
}

void JointLayout::validate() const {
  if (x_length == 0) throw std::invalid_argument("layout: x_length must be > 0");
  if (x_vocab < 2) throw std::invalid_argument("layout: x_vocab must be >= 2");
  if (label_slots > 0 && label_vocab < 2) throw std::invalid_argument("layout: label_vocab must be >= 2");
  if (variable_length && x_length < 2)
    throw std::invalid_argument("layout: variable-length sequences need x_length >= 2");
}

std::size_t JointLayout::slot_vocab(std::size_t slot) const {
  if (slot >= slot_count()) throw std::out_of_range("layout: slot out of range");
  if (is_label_slot(slot)) return label_vocab;
  return x_vocab + (variable_length ? 1 : 0);
}

std::size_t JointLayout::max_vocab() const {
  std::size_t v = x_vocab + (variable_length ? 1 : 0);
  if (label_slots > 0) v = std::max(v, label_vocab);
  return v;
}

std::vector<std::size_t> JointLayout::generation_order() const {
  std::vector<std::size_t> order;
  order.reserve(slot_count());
  auto push_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t s = lo; s < hi; ++s) order.push_back(s);
  };
  if (placement == LabelPlacement::Prefix) {
    push_range(x_length, slot_count());
    push_range(0, x_length);
  } else {
    push_range(0, slot_count());
  }
  return order;
}

std::size_t JointLayout::label_classes() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < label_slots; ++i) n *= label_vocab;
  return n;
}

std::vector<int> JointLayout::encode_label(std::size_t cls) const {
  if (cls >= label_classes())
    throw std::out_of_range("label class " + std::to_string(cls) + " out of range");
  std::vector<int> out(label_slots);
  std::size_t code = cls;
  if (label_vocab == 2) code = cls ^ (cls >> 1);
  for (std::size_t i = label_slots; i-- > 0;) {
    out[i] = static_cast<int>(code % label_vocab);
    code /= label_vocab;
  }
  return out;
}

std::size_t JointLayout::decode_label(std::span<const int> tokens) const {
  if (tokens.size() != label_slots) throw std::invalid_argument("decode_label: wrong token count");
  std::size_t code = 0;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= label_vocab)
      throw std::invalid_argument("decode_label: token out of range");
    code = code * label_vocab + static_cast<std::size_t>(t);
  }
  if (label_vocab == 2) {
    std::size_t cls = code;
    for (std::size_t shift = code >> 1; shift != 0; shift >>= 1) cls ^= shift;
    return cls;
  }
  return code;
}

LayoutPtr make_layout(JointLayout layout) {
  layout.validate();
  return std::make_shared<const JointLayout>(layout);
}

State::State(LayoutPtr layout, Mode mode)
    : layout_(std::move(layout)), mode_(mode), tokens_(layout_->slot_count(), kUnset) {}

State State::initial(LayoutPtr layout, Mode mode) {
  if (!layout) throw std::invalid_argument("State::initial: null layout");
  layout->validate();
  if (mode == Mode::AnyOrder && layout->variable_length)
    throw std::invalid_argument("any-order generation requires a fixed-length layout");
  return State(std::move(layout), mode);
}

std::size_t State::set_count() const {
  return static_cast<std::size_t>(
      std::count_if(tokens_.begin(), tokens_.end(), [](int t) { return t != kUnset; }));
}

bool State::x_closed() const {
  const JointLayout& l = *layout_;
  bool all = true;
  for (std::size_t s = 0; s < l.x_length; ++s) {
    if (tokens_[s] == kUnset) {
      all = false;
    } else if (l.variable_length && tokens_[s] == l.end_token()) {
      return true;
    }
  }
  return all;
}

bool State::is_terminal() const {
  const JointLayout& l = *layout_;
  for (std::size_t s = l.x_length; s < l.slot_count(); ++s)
    if (tokens_[s] == kUnset) return false;
  return x_closed();
}

std::optional<std::size_t> State::next_prefix_slot() const {
  const bool closed = x_closed();
  for (std::size_t s : layout_->generation_order()) {
    if (tokens_[s] != kUnset) continue;
    if (!layout_->is_label_slot(s) && closed) continue;
    return s;
  }
  return std::nullopt;
}

std::optional<std::size_t> State::last_prefix_slot() const {
  std::optional<std::size_t> last;
  for (std::size_t s : layout_->generation_order())
    if (tokens_[s] != kUnset) last = s;
  return last;
}

std::vector<int> State::x_tokens() const {
  std::vector<int> out;
  for (std::size_t s = 0; s < layout_->x_length; ++s) {
    const int t = tokens_[s];
    if (t == kUnset) continue;
    if (layout_->variable_length && t == layout_->end_token()) break;
    out.push_back(t);
  }
  return out;
}

std::vector<int> State::label_tokens() const {
  return {tokens_.begin() + static_cast<std::ptrdiff_t>(layout_->x_length), tokens_.end()};
}

bool State::token_allowed(std::size_t slot, int token) const {
  const JointLayout& l = *layout_;
  if (slot >= l.slot_count() || tokens_[slot] != kUnset) return false;
  if (token < 0 || static_cast<std::size_t>(token) >= l.slot_vocab(slot)) return false;
  if (l.is_label_slot(slot) || !l.variable_length) return true;
  if (x_closed()) return false;
  if (token == l.end_token()) return slot >= 1;
  return slot + 1 < l.x_length;
}

std::vector<Action> State::forward_actions() const {
  std::vector<Action> out;
  if (is_terminal()) return out;
  auto add_slot = [&](std::size_t s) {
    for (std::size_t t = 0; t < layout_->slot_vocab(s); ++t)
      if (token_allowed(s, static_cast<int>(t))) out.push_back({s, static_cast<int>(t)});
  };
  if (mode_ == Mode::Prefix) {
    if (auto s = next_prefix_slot()) add_slot(*s);
  } else {
    for (std::size_t s = 0; s < tokens_.size(); ++s)
      if (tokens_[s] == kUnset) add_slot(s);
  }
  return out;
}

std::vector<Action> State::backward_actions() const {
  std::vector<Action> out;
  if (mode_ == Mode::Prefix) {
    if (auto s = last_prefix_slot()) out.push_back({*s, kUnset});
  } else {
    for (std::size_t s = 0; s < tokens_.size(); ++s)
      if (tokens_[s] != kUnset) out.push_back({s, kUnset});
  }
  return out;
}

State apply_forward(const State& state, const Action& action) {
  if (state.is_terminal()) throw std::logic_error("apply_forward: state is terminal");
  if (action.slot >= state.tokens_.size()) throw std::out_of_range("apply_forward: slot out of range");
  if (state.tokens_[action.slot] != kUnset)
    throw std::logic_error("apply_forward: slot " + std::to_string(action.slot) + " already set");
  if (state.mode_ == Mode::Prefix && state.next_prefix_slot() != action.slot)
    throw std::logic_error("apply_forward: prefix mode must fill the next slot in order");
  if (!state.token_allowed(action.slot, action.token))
    throw std::invalid_argument("apply_forward: token " + std::to_string(action.token) +
                                " not allowed at slot " + std::to_string(action.slot));
  State next = state;
  next.tokens_[action.slot] = action.token;
  return next;
}

State apply_backward(const State& state, const Action& action) {
  if (action.slot >= state.tokens_.size()) throw std::out_of_range("apply_backward: slot out of range");
  if (state.tokens_[action.slot] == kUnset)
    throw std::logic_error("apply_backward: slot " + std::to_string(action.slot) + " is not set");
  if (state.mode_ == Mode::Prefix && state.last_prefix_slot() != action.slot)
    throw std::logic_error("apply_backward: prefix mode can only unset the last filled slot");
  State prev = state;
  prev.tokens_[action.slot] = kUnset;
  return prev;
}

std::vector<std::pair<State, Action>> parents(const State& state) {
  if (state.is_initial()) throw std::logic_error("parents: s_0 has no parents");
  std::vector<std::pair<State, Action>> out;
  for (const Action& back : state.backward_actions())
    out.emplace_back(apply_backward(state, back), Action{back.slot, state.token(back.slot)});
  return out;
}

std::vector<std::vector<int>> enumerate_terminals(const JointLayout& layout, std::size_t cap) {
  layout.validate();
  if (layout.variable_length)
    throw std::invalid_argument("enumerate_terminals: variable-length layouts are not enumerable");
  std::size_t count = 1;
  for (std::size_t s = 0; s < layout.slot_count(); ++s) {
    const std::size_t v = layout.slot_vocab(s);
    if (count > cap / v) throw std::length_error("enumerate_terminals: space exceeds cap");
    count *= v;
  }
  if (count > cap) throw std::length_error("enumerate_terminals: space exceeds cap");
  std::vector<std::vector<int>> out;
  out.reserve(count);
  std::vector<int> digits(layout.slot_count(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(digits);
    for (std::size_t s = digits.size(); s-- > 0;) {
      if (static_cast<std::size_t>(++digits[s]) < layout.slot_vocab(s)) break;
      digits[s] = 0;
    }
  }
  return out;
}

std::size_t terminal_index(const JointLayout& layout, std::span<const int> tokens) {
  if (tokens.size() != layout.slot_count()) throw std::invalid_argument("terminal_index: wrong length");
  std::size_t idx = 0;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const std::size_t v = layout.slot_vocab(s);
    if (tokens[s] < 0 || static_cast<std::size_t>(tokens[s]) >= v)
      throw std::invalid_argument("terminal_index: incomplete or invalid assignment");
    idx = idx * v + static_cast<std::size_t>(tokens[s]);
  }
  return idx;
}

State clamp_labels(const State& state, std::span<const int> label_tokens) {
  const JointLayout& l = state.layout();
  if (label_tokens.size() != l.label_slots)
    throw std::invalid_argument("clamp_labels: expected " + std::to_string(l.label_slots) + " label tokens");
  if (state.mode() == Mode::Prefix && l.placement == LabelPlacement::Suffix)
    throw std::logic_error("clamp_labels: prefix generation with suffix labels cannot be conditioned");
  State out = state;
  for (std::size_t i = 0; i < l.label_slots; ++i) {
    const std::size_t slot = l.x_length + i;
    if (state.is_set(slot)) throw std::logic_error("clamp_labels: label slot already set");
    if (label_tokens[i] < 0 || static_cast<std::size_t>(label_tokens[i]) >= l.label_vocab)
      throw std::invalid_argument("clamp_labels: label token out of range");
    out.tokens_[slot] = label_tokens[i];
  }
  return out;
}

State make_terminal(LayoutPtr layout, Mode mode, std::span<const int> x, std::span<const int> labels) {
  State s = State::initial(std::move(layout), mode);
  const JointLayout& l = s.layout();
  if (labels.size() != l.label_slots) throw std::invalid_argument("make_terminal: wrong label count");
  const std::size_t max_x = l.variable_length ? l.x_length - 1 : l.x_length;
  const std::size_t min_x = l.variable_length ? 1 : l.x_length;
  if (x.size() > max_x || x.size() < min_x)
    throw std::invalid_argument("make_terminal: x length " + std::to_string(x.size()) + " not in [" +
                                std::to_string(min_x) + ", " + std::to_string(max_x) + "]");
  std::vector<int> tokens(l.slot_count(), kUnset);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0 || static_cast<std::size_t>(x[i]) >= l.x_vocab)
      throw std::invalid_argument("make_terminal: x token out of range");
    tokens[i] = x[i];
  }
  if (l.variable_length) tokens[x.size()] = l.end_token();
  for (std::size_t i = 0; i < labels.size(); ++i) tokens[l.x_length + i] = labels[i];
  // Replay through the generation order so every invariant is checked once.
  for (std::size_t slot : l.generation_order()) {
    if (tokens[slot] == kUnset) continue;
    s = apply_forward(s, Action{slot, tokens[slot]});
  }
  if (!s.is_terminal()) throw std::logic_error("make_terminal: result is not terminal");
  return s;
}

double Trajectory::sum_forward() const {
  double s = 0.0;
  for (double v : forward_logprobs) s += v;
  return s;
}

double Trajectory::sum_backward() const {
  double s = 0.0;
  for (double v : backward_logprobs) s += v;
  return s;
}

std::string serialize_terminal(const State& state) {
  if (!state.is_terminal()) throw std::invalid_argument("serialize_terminal: state is not terminal");
  std::ostringstream os;
  const auto x = state.x_tokens();
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
  if (state.layout().label_slots > 0) {
    os << '|';
    const auto y = state.label_tokens();
    for (std::size_t i = 0; i < y.size(); ++i) os << (i ? "," : "") << y[i];
  }
  return os.str();
}

State parse_terminal(LayoutPtr layout, Mode mode, const std::string& text) {
  auto parse_list = [](const std::string& part) {
    std::vector<int> out;
    if (part.empty()) return out;
    std::stringstream ss(part);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument("parse_terminal: bad token '" + item + "'");
      out.push_back(v);
    }
    return out;
  };
  const auto bar = text.find('|');
  const std::vector<int> x = parse_list(text.substr(0, bar));
  const std::vector<int> y = bar == std::string::npos ? std::vector<int>{} : parse_list(text.substr(bar + 1));
  return make_terminal(std::move(layout), mode, x, y);
}

}  // namespace jebgfn::seq
