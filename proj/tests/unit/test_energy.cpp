#include <cmath>
#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "jebgfn/energy.hpp"
#include "jebgfn/ndmath/ops.hpp"

using namespace jebgfn;
using energy::EnergyConfig;
using energy::EnergyModel;
using seq::Mode;
using seq::State;

namespace {

seq::LayoutPtr bits(std::size_t x, std::size_t labels = 0) {
  return seq::make_layout({.x_length = x, .x_vocab = 2, .label_slots = labels, .label_vocab = 2});
}

seq::LayoutPtr peptides(std::size_t x) {
  return seq::make_layout({.x_length = x, .x_vocab = 20, .label_slots = 1, .label_vocab = 2,
                           .variable_length = true});
}

const EnergyConfig kOneHot{.encoding = energy::Encoding::OneHot, .hidden = 12, .hidden_layers = 2};
const EnergyConfig kEmbed{.encoding = energy::Encoding::Embedding, .hidden = 12, .hidden_layers = 2,
                          .embedding_dim = 6};

// E(x) = w * x_0 on a single binary slot.
class LinearEnergy final : public energy::EnergyFunction {
 public:
  LinearEnergy() { w_ = params_.add("w", nd::Tensor::parameter({1, 1}, {0.3})); }
  nd::Tensor energies(std::span<const State> states) const override {
    std::vector<double> x;
    for (const State& s : states) x.push_back(s.token(0));
    const nd::Tensor in = nd::Tensor::constant({states.size(), 1}, std::move(x));
    return nd::reshape(nd::matmul(in, w_), {states.size()});
  }
  nd::ParamSet& params() override { return params_; }
  const nd::ParamSet& params() const override { return params_; }

 private:
  nd::ParamSet params_;
  nd::Tensor w_;
};

State terminal(const seq::LayoutPtr& l, std::vector<int> x, std::vector<int> y = {}, Mode m = Mode::Prefix) {
  return seq::make_terminal(l, m, x, y);
}

}  // namespace

TEST_CASE("zero-weight energy is zero everywhere") {
  const auto l = bits(3, 1);
  for (const auto& cfg : {kOneHot, kEmbed}) {
    EnergyModel e(l, cfg, 1);
    e.zero_parameters();
    for (const auto& t : seq::enumerate_terminals(*l)) {
      const State s = terminal(l, {t[0], t[1], t[2]}, {t[3]});
      CHECK(e.energy(s).item() == 0.0);
      CHECK(energy::log_reward_from_energy(e.energy(s).item()) == 0.0);
    }
  }
}

TEST_CASE("swapping distinct tokens changes the energy") {
  const auto l = peptides(8);
  for (const auto& cfg : {kOneHot, kEmbed}) {
    EnergyModel e(l, cfg, 2);
    const double a = e.energy(terminal(l, {3, 11, 5}, {1})).item();
    const double b = e.energy(terminal(l, {11, 3, 5}, {1})).item();
    CHECK(a != b);
  }
}

TEST_CASE("energy rejects partial states") {
  EnergyModel e(bits(3), kOneHot, 3);
  State s = seq::apply_forward(State::initial(bits(3), Mode::Prefix), {0, 1});
  CHECK_THROWS_AS(e.energy(s), std::invalid_argument);
}

TEST_CASE("energy gradients match finite differences") {
  const auto l = peptides(6);
  for (const auto& cfg : {kOneHot, kEmbed}) {
    EnergyModel e(l, cfg, 4);
    const std::vector<State> batch{terminal(l, {1, 2, 3}, {0}), terminal(l, {19, 0}, {1}),
                                   terminal(l, {4, 4, 4, 4, 4}, {1})};
    const auto r = testsupport::check_gradients(e.params(), [&] { return nd::mean(e.energies(batch)); });
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("reward floor") {
  CHECK(energy::log_reward_from_energy(1.5) == -1.5);
  CHECK(energy::log_reward_from_energy(500.0) == energy::kLogRewardFloor);
}

TEST_CASE("k schedule") {
  const energy::KSchedule s{.k_min = 1, .k_max = 33, .total = 10000};
  CHECK(energy::k_for_iteration(s, 0) == 1);
  CHECK(energy::k_for_iteration(s, 2500) == 17);
  CHECK(energy::k_for_iteration(s, 5000) == 33);
  CHECK(energy::k_for_iteration(s, 9999) == 33);
  CHECK_THROWS_AS(energy::k_for_iteration(s, 10000), std::out_of_range);
  for (std::size_t i = 1; i < s.total; ++i)
    CHECK(energy::k_for_iteration(s, i) >= energy::k_for_iteration(s, i - 1));
  const energy::KSchedule c{.kind = energy::ScheduleKind::Constant, .k_min = 2, .k_max = 5, .total = 10};
  CHECK(energy::k_for_iteration(c, 0) == 5);
  CHECK_NOTHROW(s.validate(33));
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
  CHECK_THROWS_AS((energy::KSchedule{.k_min = 0, .k_max = 1, .total = 1}.validate(3)), std::invalid_argument);
}

TEST_CASE("back-and-forth proposals") {
  const auto l = bits(4, 1);
  EnergyModel e(l, kOneHot, 5);
  SUBCASE("full horizon regenerates from s_0") {
    for (Mode mode : {Mode::Prefix, Mode::AnyOrder}) {
      gfn::PolicyModel p(l, mode, {.hidden = 8, .hidden_layers = 1}, 6);
      const State origin = terminal(l, {1, 0, 1, 1}, {1}, mode);
      const auto r = energy::propose_back_forth(e, p, origin, 5, 7);
      CHECK(r.intermediate.is_initial());
      CHECK(r.candidate.is_terminal());
      CHECK(r.acceptance >= 0.0);
      CHECK(r.acceptance <= 1.0);
    }
  }
  SUBCASE("prefix mode has zero backward terms") {
    gfn::PolicyModel p(l, Mode::Prefix, {.hidden = 8, .hidden_layers = 1}, 8);
    nd::Rng rng(9);
    std::vector<State> origins;
    for (int i = 0; i < 16; ++i) origins.push_back(terminal(l, {i & 1, (i >> 1) & 1, (i >> 2) & 1, 1}, {i & 1}));
    for (std::size_t k = 1; k <= 5; ++k)
      for (const auto& r : energy::propose_back_forth(e, p, origins, k, rng)) {
        CHECK(r.log_pb_tau == 0.0);
        CHECK(r.log_pb_tau_prime == 0.0);
        CHECK(r.intermediate.set_count() == 5 - k);
        for (std::size_t s = 0; s < 5; ++s)
          if (r.intermediate.is_set(s)) CHECK(r.candidate.token(s) == r.origin.token(s));
        const double expect = (-r.energy_candidate + r.log_pf_tau) - (-r.energy_origin + r.log_pf_tau_prime);
        CHECK(r.log_ratio == doctest::Approx(expect).epsilon(1e-15));
      }
  }
  SUBCASE("any-order terms match direct evaluation") {
    gfn::PolicyModel p(l, Mode::AnyOrder, {.hidden = 8, .hidden_layers = 1, .learned_backward = true}, 10);
    const State origin = terminal(l, {0, 1, 1, 0}, {0}, Mode::AnyOrder);
    const auto r = energy::propose_back_forth(e, p, origin, 3, 11);
    CHECK(r.intermediate.set_count() == 2);
    // Forward half of tau' and the reverse of tau.
    CHECK(std::isfinite(r.log_pf_tau));
    CHECK(r.log_pb_tau < 0.0);
    CHECK(r.log_pb_tau_prime < 0.0);
    for (std::size_t s = 0; s < 5; ++s)
      if (r.intermediate.is_set(s)) {
        CHECK(r.origin.token(s) == r.intermediate.token(s));
        CHECK(r.candidate.token(s) == r.intermediate.token(s));
      }
  }
  SUBCASE("variable-length prefix proposals stay valid") {
    const auto pl = peptides(6);
    EnergyModel pe(pl, kEmbed, 12);
    gfn::PolicyModel p(pl, Mode::Prefix, {.hidden = 8, .hidden_layers = 1}, 13);
    nd::Rng rng(14);
    std::vector<State> origins{terminal(pl, {1}, {0}), terminal(pl, {1, 2, 3, 4, 5}, {1})};
    for (std::size_t k = 1; k <= 7; ++k)
      for (const auto& r : energy::propose_back_forth(pe, p, origins, k, rng)) {
        CHECK(r.candidate.is_terminal());
        CHECK(std::isfinite(r.log_ratio));
      }
  }
  SUBCASE("determinism and range") {
    gfn::PolicyModel p(l, Mode::AnyOrder, {.hidden = 8, .hidden_layers = 1}, 15);
    const State origin = terminal(l, {1, 1, 0, 0}, {1}, Mode::AnyOrder);
    const auto a = energy::propose_back_forth(e, p, origin, 2, 99);
    const auto b = energy::propose_back_forth(e, p, origin, 2, 99);
    CHECK(a.to_text() == b.to_text());
    CHECK_THROWS_AS(energy::propose_back_forth(e, p, origin, 0, 1), std::out_of_range);
    CHECK_THROWS_AS(energy::propose_back_forth(e, p, origin, 6, 1), std::out_of_range);
  }
}

TEST_CASE("metropolis-hastings acceptance") {
  const auto l = bits(2);
  energy::ProposalRecord r{terminal(l, {0, 1}), State::initial(l, Mode::Prefix), terminal(l, {0, 1})};
  r.log_pf_tau = r.log_pf_tau_prime = std::log(0.3);
  SUBCASE("identical candidate") {
    CHECK(energy::mh_accept(r, 1));
    CHECK(r.acceptance == 1.0);
  }
  SUBCASE("much lower candidate energy clamps to one") {
    r.energy_candidate = -1e6;
    energy::score_proposal(r);
    CHECK(r.acceptance == 1.0);
  }
  SUBCASE("energy gap of ln 2 halves acceptance") {
    r.energy_origin = 0.0;
    r.energy_candidate = std::log(2.0);
    energy::score_proposal(r);
    CHECK(r.acceptance == doctest::Approx(0.5).epsilon(1e-15));
    int accepted = 0;
    for (std::uint64_t seed = 0; seed < 20000; ++seed) accepted += energy::mh_accept(r, seed);
    CHECK(std::abs(accepted / 20000.0 - 0.5) < 3.0 * std::sqrt(0.25 / 20000.0));
  }
  SUBCASE("non-finite terms throw") {
    r.log_pf_tau = -std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(energy::score_proposal(r), std::domain_error);
  }
}

TEST_CASE("contrastive divergence gradient") {
  SUBCASE("identical batches give exactly zero gradient") {
    const auto l = bits(3, 1);
    EnergyModel e(l, kEmbed, 16);
    const std::vector<State> batch{terminal(l, {1, 0, 1}, {1}), terminal(l, {0, 0, 1}, {0})};
    nd::Tape tape;
    {
      nd::TapeScope scope(tape);
      tape.backward(energy::cd_objective(e, batch, batch));
    }
    for (const auto& [name, t] : e.params())
      for (double g : t.grad()) CHECK(g == 0.0);
  }
  SUBCASE("linear energy on one bit") {
    const auto l = bits(1);
    LinearEnergy e;
    const std::vector<State> pos{terminal(l, {1}), terminal(l, {1}), terminal(l, {0}), terminal(l, {1})};
    const std::vector<State> neg{terminal(l, {0}), terminal(l, {1}), terminal(l, {0}), terminal(l, {0})};
    nd::AdamState opt = nd::make_adam(e.params(), {.lr = 0.1});
    nd::Tape tape;
    {
      nd::TapeScope scope(tape);
      tape.backward(energy::cd_objective(e, pos, neg));
    }
    CHECK(e.params().get("w").grad()[0] == doctest::Approx(0.75 - 0.25).epsilon(1e-15));
    e.params().zero_grad();
    const auto stats = energy::cd_update(e, pos, neg, opt);
    CHECK(stats.gap() == doctest::Approx(0.3 * 0.5).epsilon(1e-15));
    // First Adam step moves by lr against the gradient sign.
    CHECK(e.params().get("w").at(0) == doctest::Approx(0.3 - 0.1).epsilon(1e-6));
  }
  SUBCASE("batch contract") {
    LinearEnergy e;
    nd::AdamState opt = nd::make_adam(e.params(), {});
    const auto l = bits(1);
    const std::vector<State> one{terminal(l, {1})};
    const std::vector<State> two{terminal(l, {1}), terminal(l, {0})};
    CHECK_THROWS_AS(energy::cd_update(e, {}, {}, opt), std::invalid_argument);
    CHECK_THROWS_AS(energy::cd_update(e, one, two, opt), std::invalid_argument);
  }
}
