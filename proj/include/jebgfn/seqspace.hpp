#pragma once

// State space of joint (x, y) token sequences.
//
// Physical slot order is always [x_0 .. x_{L-1}, y_0 .. y_{M-1}]. The order
// in which slots are filled during PREFIX (autoregressive) generation depends
// on the label placement: label slots first (PREFIX placement) or last
// (SUFFIX placement). ANY_ORDER generation may fill any unset slot.
//
// Variable-length layouts reserve token `x_vocab` as END in x slots. Once END
// is placed the x slots after it stay unset and count as padding; a sequence
// holds between 1 and x_length-1 tokens.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace jebgfn::seq {

inline constexpr int kUnset = -1;

enum class Mode { Prefix, AnyOrder };
enum class LabelPlacement { Prefix, Suffix };

const char* to_string(Mode m);
Mode parse_mode(const std::string& s);

struct JointLayout {
  std::size_t x_length = 0;
  std::size_t x_vocab = 2;
  std::size_t label_slots = 0;
  std::size_t label_vocab = 2;
  LabelPlacement placement = LabelPlacement::Prefix;
  bool variable_length = false;

  /// Throws std::invalid_argument when the layout is degenerate.
  void validate() const;

  std::size_t slot_count() const { return x_length + label_slots; }
  bool is_label_slot(std::size_t slot) const { return slot >= x_length; }
  std::size_t slot_vocab(std::size_t slot) const;
  std::size_t max_vocab() const;
  int end_token() const { return variable_length ? static_cast<int>(x_vocab) : kUnset; }
  std::vector<std::size_t> generation_order() const;

  /// Number of distinct label values (label_vocab ^ label_slots).
  std::size_t label_classes() const;
  /// Binary labels over several slots use the reflected grey code, most
  /// significant bit first; other label alphabets use base-label_vocab digits.
  std::vector<int> encode_label(std::size_t cls) const;
  std::size_t decode_label(std::span<const int> tokens) const;
};

using LayoutPtr = std::shared_ptr<const JointLayout>;
LayoutPtr make_layout(JointLayout layout);

struct Action {
  std::size_t slot = 0;
  int token = kUnset;  // ignored for backward actions
  bool operator==(const Action&) const = default;
};

class State {
 public:
  static State initial(LayoutPtr layout, Mode mode);

  const JointLayout& layout() const { return *layout_; }
  const LayoutPtr& layout_ptr() const { return layout_; }
  Mode mode() const { return mode_; }
  std::span<const int> tokens() const { return tokens_; }
  int token(std::size_t slot) const { return tokens_.at(slot); }
  bool is_set(std::size_t slot) const { return tokens_.at(slot) != kUnset; }
  std::size_t set_count() const;
  bool is_initial() const { return set_count() == 0; }
  /// True once every x slot is set or END has been placed.
  bool x_closed() const;
  bool is_terminal() const;
  /// Slot filled next in PREFIX generation; empty when terminal.
  std::optional<std::size_t> next_prefix_slot() const;
  /// Most recently filled slot in PREFIX generation order; empty at s_0.
  std::optional<std::size_t> last_prefix_slot() const;

  /// x tokens without END and padding.
  std::vector<int> x_tokens() const;
  std::vector<int> label_tokens() const;

  bool token_allowed(std::size_t slot, int token) const;
  /// Valid forward actions in this state's mode (empty when terminal).
  std::vector<Action> forward_actions() const;
  /// Valid backward actions: the last prefix slot, or any set slot.
  std::vector<Action> backward_actions() const;

  bool operator==(const State& o) const { return mode_ == o.mode_ && tokens_ == o.tokens_; }
  bool operator<(const State& o) const { return tokens_ < o.tokens_; }

 private:
  friend State apply_forward(const State&, const Action&);
  friend State apply_backward(const State&, const Action&);
  friend State clamp_labels(const State&, std::span<const int>);
  State(LayoutPtr layout, Mode mode);

  LayoutPtr layout_;
  Mode mode_ = Mode::Prefix;
  std::vector<int> tokens_;
};

State apply_forward(const State& state, const Action& action);
State apply_backward(const State& state, const Action& action);

/// Every (parent, forward action parent -> state) pair.
std::vector<std::pair<State, Action>> parents(const State& state);

inline constexpr std::size_t kDefaultEnumerationCap = std::size_t{1} << 20;

/// All complete assignments of a fixed-length layout in mixed-radix order
/// (slot 0 most significant).
std::vector<std::vector<int>> enumerate_terminals(const JointLayout& layout,
                                                  std::size_t cap = kDefaultEnumerationCap);
/// Position of a complete fixed-length assignment in enumerate_terminals order.
std::size_t terminal_index(const JointLayout& layout, std::span<const int> tokens);

/// Assigns the label slots, which must be unset.
State clamp_labels(const State& state, std::span<const int> label_tokens);

/// Builds a terminal state from x tokens (without END) and label tokens.
State make_terminal(LayoutPtr layout, Mode mode, std::span<const int> x,
                    std::span<const int> labels);

struct Trajectory {
  std::vector<State> states;  // s_0 .. s_n (s_0 may carry clamped labels)
  std::vector<Action> actions;
  std::vector<double> forward_logprobs;
  std::vector<double> backward_logprobs;
  bool complete = false;

  std::size_t length() const { return actions.size(); }
  const State& terminal() const { return states.back(); }
  double sum_forward() const;
  double sum_backward() const;
};

/// "x0,x1,...|y0,..." (the '|' part is omitted for label-free layouts).
std::string serialize_terminal(const State& state);
State parse_terminal(LayoutPtr layout, Mode mode, const std::string& text);

}  // namespace jebgfn::seq
