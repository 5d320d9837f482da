#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "jebgfn/trainer.hpp"

namespace jebgfn::train {

void ALConfig::validate() const {
  if (rounds == 0) throw std::invalid_argument("al: rounds must be >= 1");
  if (per_round == 0) throw std::invalid_argument("al: samples per round must be >= 1");
  if (top_k == 0) throw std::invalid_argument("al: top-K must be >= 1");
  if (!(sample_temperature > 0.0)) throw std::invalid_argument("al: sample temperature must be > 0");
}

Oracle synthetic_oracle() {
  return [oracle = data::SyntheticOracle::standard()](std::span<const std::vector<int>> xs) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(oracle.score_tokens(x));
    return out;
  };
}

ALResult run_active_learning(data::LabeledDataset initial, const Oracle& oracle, const TrainConfig& config,
                             const ALConfig& al, const RoundHook& hook) {
  al.validate();
  config.validate();
  if (!oracle) throw std::invalid_argument("al: no oracle");
  if (initial.empty()) throw std::invalid_argument("al: empty initial dataset");
  const seq::LayoutPtr layout = initial.layout;
  if (al.positive_label >= layout->label_classes()) throw std::invalid_argument("al: positive label out of range");

  const auto initial_sequences = eval::dataset_sequences(initial);
  std::set<std::vector<int>> seen(initial_sequences.begin(), initial_sequences.end());
  ALResult result;
  result.dataset = std::move(initial);

  for (std::size_t round = 1; round <= al.rounds; ++round) {
    if (!result.trainer || !al.warm_start) {
      TrainConfig rc = config;
      rc.seed = config.seed + round - 1;
      result.trainer = std::make_unique<JointTrainer>(layout, rc);
    }
    result.trainer->begin_phase(std::make_shared<const data::LabeledDataset>(result.dataset), config.iterations);
    result.trainer->run();

    nd::Rng rng(config.seed * 1000003 + round);
    const auto states = result.trainer->sample(al.per_round, al.positive_label, rng, al.sample_temperature);
    std::vector<std::vector<int>> xs;
    xs.reserve(states.size());
    for (const auto& s : states) xs.push_back(s.x_tokens());

    std::vector<double> scores;
    try {
      scores = oracle(xs);
      if (scores.size() != xs.size()) throw std::runtime_error("oracle returned the wrong number of scores");
      for (double s : scores)
        if (!std::isfinite(s)) throw std::runtime_error("oracle returned a non-finite score");
    } catch (const std::exception& e) {
      result.aborted = true;
      result.abort_reason = "round " + std::to_string(round) + ": " + e.what();
      break;
    }

    RoundSummary summary;
    summary.round = round;
    summary.sampled = xs.size();
    summary.max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const std::size_t label = scores[i] > al.threshold ? 1 : 0;
      summary.mean_score += scores[i] / static_cast<double>(xs.size());
      summary.max_score = std::max(summary.max_score, scores[i]);
      result.candidates.push_back({xs[i], label, scores[i]});
      result.candidate_round.push_back(round);
      if (seen.insert(xs[i]).second) {
        result.dataset.records.push_back({xs[i], layout->encode_label(label), scores[i], round});
        ++summary.appended;
      }
    }
    summary.dataset_size = result.dataset.size();
    result.history.push_back(summary);
    if (hook) hook(result, summary);
  }
  if (result.candidates.size() >= al.top_k)
    result.report = eval::compute_metrics(result.candidates, initial_sequences, al.top_k);
  return result;
}

}  // namespace jebgfn::train
