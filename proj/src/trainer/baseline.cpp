#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "jebgfn/ndmath/ops.hpp"
#include "jebgfn/trainer.hpp"

namespace jebgfn::train {

namespace {

// -log p(cls | x) of a frozen classifier, as an energy over x-only states.
class ClassifierEnergy final : public energy::EnergyFunction {
 public:
  ClassifierEnergy(std::shared_ptr<Classifier> classifier, std::size_t cls)
      : classifier_(std::move(classifier)), cls_(cls) {}

  nd::Tensor energies(std::span<const seq::State> states) const override {
    std::vector<std::vector<int>> xs;
    xs.reserve(states.size());
    for (const auto& s : states) xs.push_back(s.x_tokens());
    const std::vector<std::size_t> col(states.size(), cls_);
    return nd::scale(nd::gather_columns(classifier_->log_probs(xs), col), -1.0);
  }
  nd::ParamSet& params() override { return frozen_; }
  const nd::ParamSet& params() const override { return frozen_; }

 private:
  std::shared_ptr<Classifier> classifier_;
  std::size_t cls_;
  nd::ParamSet frozen_;  // nothing here is trained
};

}  // namespace

Classifier::Classifier(seq::LayoutPtr layout, std::size_t hidden, std::size_t hidden_layers, std::uint64_t seed)
    : layout_(std::move(layout)), classes_(layout_->label_classes()) {
  if (layout_->label_slots == 0) throw std::invalid_argument("Classifier: layout has no labels");
  if (hidden_layers == 0) throw std::invalid_argument("Classifier: need at least one hidden layer");
  nd::Rng rng(seed);
  // One row per (slot, token) with one extra token for END/padding.
  const std::size_t rows = layout_->x_length * (layout_->x_vocab + 1);
  table_ = params_.add("input.weight", nd::init_uniform({rows, hidden}, layout_->x_length, rng));
  bias_ = params_.add("input.bias", nd::init_uniform({hidden}, layout_->x_length, rng));
  std::vector<std::size_t> widths(hidden_layers, hidden);
  widths.push_back(classes_);
  trunk_ = nd::Mlp::make(params_, "trunk", widths, rng);
}

nd::Tensor Classifier::log_probs(std::span<const std::vector<int>> xs) const {
  const std::size_t len = layout_->x_length, width = layout_->x_vocab + 1;
  std::vector<std::size_t> idx;
  idx.reserve(xs.size() * len);
  for (const auto& x : xs) {
    if (x.size() > len) throw std::invalid_argument("Classifier: sequence too long");
    for (std::size_t s = 0; s < len; ++s) {
      const int t = s < x.size() ? x[s] : static_cast<int>(layout_->x_vocab);
      if (t < 0 || t > static_cast<int>(layout_->x_vocab)) throw std::invalid_argument("Classifier: bad token");
      idx.push_back(s * width + static_cast<std::size_t>(t));
    }
  }
  const nd::Tensor h = nd::relu(nd::add_bias(nd::embedding_bag(table_, idx, len), bias_));
  return nd::log_softmax(trunk_(h), 1);
}

double Classifier::accuracy(const data::LabeledDataset& dataset) const {
  nd::NoGradScope no_grad;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 2048;
  for (std::size_t lo = 0; lo < dataset.size(); lo += kChunk) {
    const std::size_t hi = std::min(dataset.size(), lo + kChunk);
    std::vector<std::vector<int>> xs;
    for (std::size_t i = lo; i < hi; ++i) xs.push_back(dataset.records[i].x);
    const nd::Tensor lp = log_probs(xs);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto row = lp.values().subspan((i - lo) * classes_, classes_);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == layout_->decode_label(dataset.records[i].y) ? 1 : 0;
    }
  }
  return dataset.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::vector<seq::State> CgfnBaseline::sample(std::size_t cls, std::size_t count, nd::Rng& rng) const {
  return per_class.at(cls)->sample(count, std::nullopt, rng);
}

CgfnBaseline train_cgfn_baseline(const data::LabeledDataset& dataset, const TrainConfig& config,
                                 const ClassifierConfig& cc) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train_cgfn_baseline: empty dataset");
  const seq::LayoutPtr& layout = dataset.layout;
  for (std::size_t c = 0; c < layout->label_classes(); ++c)
    if (dataset.count_class(c) == 0)
      throw std::invalid_argument("train_cgfn_baseline: class " + std::to_string(c) + " is absent");

  CgfnBaseline out;
  auto classifier = std::make_shared<Classifier>(layout, cc.hidden, cc.hidden_layers, config.seed + 17);
  nd::AdamState opt = nd::make_adam(classifier->params(), {.lr = cc.lr});
  nd::Rng rng(config.seed + 19);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += cc.batch) {
      const std::size_t hi = std::min(order.size(), lo + cc.batch);
      std::vector<std::vector<int>> xs;
      std::vector<std::size_t> ys;
      for (std::size_t i = lo; i < hi; ++i) {
        xs.push_back(dataset.records[order[i]].x);
        ys.push_back(layout->decode_label(dataset.records[order[i]].y));
      }
      nd::Tape tape;
      {
        nd::TapeScope scope(tape);
        tape.backward(nd::scale(nd::mean(nd::gather_columns(classifier->log_probs(xs), ys)), -1.0));
      }
      nd::adam_step(classifier->params(), opt);
    }
  }
  out.train_accuracy = classifier->accuracy(dataset);
  if (out.train_accuracy < cc.min_accuracy)
    throw std::runtime_error("train_cgfn_baseline: classifier train accuracy " + std::to_string(out.train_accuracy) +
                             " is below " + std::to_string(cc.min_accuracy));

  seq::JointLayout xl = *layout;
  xl.label_slots = 0;
  out.x_layout = seq::make_layout(xl);
  for (std::size_t c = 0; c < layout->label_classes(); ++c) {
    TrainConfig pc = config;
    pc.seed = config.seed + 1 + c;
    pc.energy_steps = 0;
    if (pc.policy_steps == 0) pc.policy_steps = 1;
    auto trainer =
        std::make_unique<JointTrainer>(out.x_layout, pc, std::make_unique<ClassifierEnergy>(classifier, c));
    trainer->begin_phase(nullptr, pc.iterations);
    trainer->run();
    out.per_class.push_back(std::move(trainer));
  }
  out.classifier = std::move(classifier);
  return out;
}

}  // namespace jebgfn::train
