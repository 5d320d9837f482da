#pragma once

// Named tasks: their layouts, data sources, default training settings and
// the flat `key = value` config files the command-line tool reads.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "jebgfn/datasets.hpp"
#include "jebgfn/trainer.hpp"

namespace jebgfn::train {

enum class Task { TwoMoons, FourGaussians, Mnist, Amp };

const char* to_string(Task t);
Task parse_task(const std::string& s);

struct TaskConfig {
  Task task = Task::TwoMoons;
  std::size_t train_size = 2000;   // 2D tasks
  double noise = 0.1;              // two moons
  std::uint64_t data_seed = 7;
  std::string amp_csv;             // empty: generated corpus scored by the synthetic oracle
  std::string mnist_images;
  std::string mnist_labels;
  std::size_t mnist_per_digit = 2000;
  std::size_t sample_count = 1000;  // per label, written after training
  /// Policy temperature for the samples written after training and for
  /// active-learning candidates.
  double sample_temperature = 1.0;
  TrainConfig train;

  std::string to_text() const;
};

/// Reduced-size settings that finish on one CPU core.
TaskConfig task_defaults(Task task);

/// Sets a task or training key; false for unknown keys.
bool apply_task_entry(TaskConfig& config, const std::string& key, const std::string& value);

/// Parses `key = value` lines ('#' starts a comment) on top of `base`.
/// Unknown keys and malformed lines are errors.
TaskConfig parse_task_config(const std::string& text, TaskConfig base);

seq::LayoutPtr task_layout(Task task);
std::optional<data::GreyCodec> task_codec(Task task);
data::LabeledDataset load_task_data(const TaskConfig& config);

}  // namespace jebgfn::train
