#include <charconv>
#include <sstream>
#include <stdexcept>

#include "jebgfn/tasks.hpp"

namespace jebgfn::train {

const char* to_string(Task t) {
  switch (t) {
    case Task::TwoMoons: return "two-moons";
    case Task::FourGaussians: return "four-gaussians";
    case Task::Mnist: return "mnist";
    case Task::Amp: return "amp";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  for (Task t : {Task::TwoMoons, Task::FourGaussians, Task::Mnist, Task::Amp})
    if (s == to_string(t)) return t;
  throw std::invalid_argument("unknown task '" + s + "'");
}

std::string TaskConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "task = " << to_string(task) << '\n'
     << "train_size = " << train_size << '\n'
     << "noise = " << noise << '\n'
     << "data_seed = " << data_seed << '\n'
     << "amp_csv = " << amp_csv << '\n'
     << "mnist_images = " << mnist_images << '\n'
     << "mnist_labels = " << mnist_labels << '\n'
     << "mnist_per_digit = " << mnist_per_digit << '\n'
     << "sample_count = " << sample_count << '\n'
     << "sample_temperature = " << sample_temperature << '\n'
     << train.to_text();
  return os.str();
}

TaskConfig task_defaults(Task task) {
  TaskConfig c;
  c.task = task;
  TrainConfig& t = c.train;
  switch (task) {
    case Task::TwoMoons:
    case Task::FourGaussians:
      t.iterations = 5000;
      t.batch = 64;
      t.energy_lr = 3e-3;
      // Full regeneration: in prefix order a small K only perturbs the low
      // bits of y.
      t.k_kind = energy::ScheduleKind::Constant;
      t.policy = {.hidden = 128, .hidden_layers = 2};
      t.energy = {.encoding = energy::Encoding::OneHot, .hidden = 128, .hidden_layers = 2};
      // With 0.01 the joint sampler settles on one value of the leading label
      // bit and never learns x for the other two classes.
      if (task == Task::FourGaussians) t.epsilon_start = 0.1;
      break;
    case Task::Mnist:
      t.iterations = 2000;
      t.batch = 16;
      t.policy = {.hidden = 128, .hidden_layers = 2};
      t.energy = {.encoding = energy::Encoding::OneHot, .hidden = 128, .hidden_layers = 2};
      c.mnist_per_digit = 500;
      break;
    case Task::Amp:
      t.iterations = 2000;
      t.batch = 32;
      // log Z has to climb to about 150 nats.
      t.log_z_lr = 1.0;
      // Short peptides are mostly padding, which a small K would only touch.
      t.k_kind = energy::ScheduleKind::Constant;
      t.policy = {.hidden = 128, .hidden_layers = 2};
      t.energy = {.encoding = energy::Encoding::Embedding, .hidden = 128, .hidden_layers = 2, .embedding_dim = 64};
      c.data_seed = 2024;
      // At temperature 1 the samples score like shuffled positives: the
      // energy sees composition and position but not adjacent residues.
      c.sample_temperature = 0.25;
      break;
  }
  return c;
}

bool apply_task_entry(TaskConfig& c, const std::string& key, const std::string& v) {
  auto size = [&](std::size_t& out) {
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
      throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  };
  auto real = [&] {
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw std::invalid_argument("config: bad value '" + v + "' for " + key);
    return out;
  };
  if (key == "task") c.task = parse_task(v);
  else if (key == "train_size") size(c.train_size);
  else if (key == "noise") {
    c.noise = real();
    if (c.noise < 0) throw std::invalid_argument("config: bad value '" + v + "' for noise");
  } else if (key == "sample_temperature") {
    c.sample_temperature = real();
    if (!(c.sample_temperature > 0))
      throw std::invalid_argument("config: bad value '" + v + "' for sample_temperature");
  } else if (key == "data_seed") {
    std::size_t s = 0;
    size(s);
    c.data_seed = s;
  } else if (key == "amp_csv") c.amp_csv = v;
  else if (key == "mnist_images") c.mnist_images = v;
  else if (key == "mnist_labels") c.mnist_labels = v;
  else if (key == "mnist_per_digit") size(c.mnist_per_digit);
  else if (key == "sample_count") size(c.sample_count);
  else return apply_config_entry(c.train, key, v);
  return true;
}

TaskConfig parse_task_config(const std::string& text, TaskConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (!apply_task_entry(base, key, value))
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  base.train.validate();
  return base;
}

seq::LayoutPtr task_layout(Task task) {
  switch (task) {
    case Task::TwoMoons: return data::two_moons_layout();
    case Task::FourGaussians: return data::four_gaussians_layout();
    case Task::Mnist: return data::mnist_layout();
    case Task::Amp: return data::amp_layout();
  }
  throw std::logic_error("task_layout");
}

std::optional<data::GreyCodec> task_codec(Task task) {
  if (task == Task::TwoMoons) return data::GreyCodec::two_moons();
  if (task == Task::FourGaussians) return data::GreyCodec::four_gaussians();
  return std::nullopt;
}

data::LabeledDataset load_task_data(const TaskConfig& c) {
  switch (c.task) {
    case Task::TwoMoons:
      return data::points_to_dataset(data::sample_two_moons(c.train_size, c.noise, c.data_seed),
                                     data::GreyCodec::two_moons(), data::two_moons_layout());
    case Task::FourGaussians:
      return data::points_to_dataset(data::sample_four_gaussians(c.train_size, c.data_seed),
                                     data::GreyCodec::four_gaussians(), data::four_gaussians_layout());
    case Task::Mnist: {
      if (c.mnist_images.empty() || c.mnist_labels.empty())
        throw std::invalid_argument("mnist: set mnist_images and mnist_labels");
      data::MnistOptions o;
      o.per_digit = c.mnist_per_digit;
      return data::load_mnist_binarized(c.mnist_images, c.mnist_labels, o);
    }
    case Task::Amp: {
      if (c.amp_csv.empty()) {
        data::CorpusSpec spec;
        spec.seed = c.data_seed;
        return data::generate_amp_corpus(data::SyntheticOracle::standard(), spec);
      }
      auto load = data::load_amp_csv(c.amp_csv);
      return std::move(load.data);
    }
  }
  throw std::logic_error("load_task_data");
}

}  // namespace jebgfn::train
