#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "jebgfn/evalkit.hpp"

namespace jebgfn::eval {

namespace {

template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) { return edit_distance(a, b); }
std::size_t levenshtein(std::string_view a, std::string_view b) { return edit_distance(a, b); }

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "performance = " << fmt(performance) << '\n'
     << "diversity = " << fmt(diversity) << '\n'
     << "novelty = " << fmt(novelty) << '\n'
     << "k = " << k << '\n'
     << "samples = " << sample_count << '\n'
     << "distance = " << distance << '\n'
     << "novelty_definition = " << novelty_definition << '\n';
  return os.str();
}

std::vector<std::size_t> top_k(std::span<const ScoredSample> samples, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k: K must be >= 1");
  if (samples.size() < k)
    throw std::invalid_argument("top_k: " + std::to_string(samples.size()) + " samples for K = " + std::to_string(k));
  for (const auto& s : samples)
    if (!s.score) throw std::invalid_argument("top_k: every sample needs a score");
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (*samples[a].score != *samples[b].score) return *samples[a].score > *samples[b].score;
    return samples[a].x < samples[b].x;
  });
  idx.resize(k);
  return idx;
}

MetricsReport compute_metrics(std::span<const ScoredSample> samples, std::span<const std::vector<int>> initial,
                              std::size_t k) {
  if (initial.empty()) throw std::invalid_argument("compute_metrics: empty initial dataset");
  const auto best = top_k(samples, k);
  MetricsReport r;
  r.k = k;
  r.sample_count = samples.size();
  for (std::size_t i : best) r.performance += *samples[i].score;
  r.performance /= static_cast<double>(k);

  if (k > 1) {
    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b)
        total += static_cast<double>(levenshtein(samples[best[a]].x, samples[best[b]].x));
    r.diversity = total / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
  }

  for (std::size_t i : best) {
    std::size_t nearest = std::numeric_limits<std::size_t>::max();
    for (const auto& ref : initial) {
      // The distance is at least the length difference.
      const std::size_t gap = ref.size() > samples[i].x.size() ? ref.size() - samples[i].x.size()
                                                                : samples[i].x.size() - ref.size();
      if (gap >= nearest) continue;
      nearest = std::min(nearest, levenshtein(samples[i].x, ref));
      if (nearest == 0) break;
    }
    r.novelty += static_cast<double>(nearest);
  }
  r.novelty /= static_cast<double>(k);
  return r;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("tv_distance: support mismatch");
  double sp = 0.0, sq = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("tv_distance: negative probability");
    sp += p[i];
    sq += q[i];
    l1 += std::abs(p[i] - q[i]);
  }
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
    throw std::invalid_argument("tv_distance: inputs must sum to 1");
  return 0.5 * l1;
}

std::vector<double> boltzmann(std::span<const double> energies) {
  if (energies.empty()) throw std::invalid_argument("boltzmann: empty table");
  const double m = *std::min_element(energies.begin(), energies.end());
  std::vector<double> p(energies.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(-(energies[i] - m));
  for (double& v : p) v /= z;
  return p;
}

double mode_accuracy(std::span<const data::Point2> samples, std::span<const int> labels,
                     std::span<const data::Point2> means, double sigma) {
  if (samples.size() != labels.size()) throw std::invalid_argument("mode_accuracy: one label per sample");
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < means.size(); ++m) {
      const double d = std::hypot(samples[i].x - means[m].x, samples[i].y - means[m].y);
      if (d < best) best = d, nearest = m;
    }
    if (static_cast<int>(nearest) == labels[i] && best <= 3.0 * sigma) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

void DensityGrid::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "x,y,value\n";
  for (std::size_t i = 0; i < value.size(); ++i) os << fmt(x[i]) << ',' << fmt(y[i]) << ',' << fmt(value[i]) << '\n';
}

std::size_t DensityGrid::argmin() const {
  if (value.empty()) throw std::logic_error("DensityGrid: empty grid");
  return static_cast<std::size_t>(std::min_element(value.begin(), value.end()) - value.begin());
}

DensityGrid sample_count_grid(std::span<const data::Point2> samples, const data::GreyCodec& codec,
                              std::optional<std::size_t> label, std::size_t resolution) {
  if (resolution == 0) throw std::invalid_argument("sample_count_grid: resolution must be > 0");
  DensityGrid g;
  g.resolution = resolution;
  g.lo = {codec.lo(0), codec.lo(1)};
  g.hi = {codec.hi(0), codec.hi(1)};
  g.label = label;
  for (std::size_t row = 0; row < resolution; ++row)
    for (std::size_t col = 0; col < resolution; ++col) {
      g.x.push_back(g.lo[0] + (static_cast<double>(col) + 0.5) * (g.hi[0] - g.lo[0]) / resolution);
      g.y.push_back(g.lo[1] + (static_cast<double>(row) + 0.5) * (g.hi[1] - g.lo[1]) / resolution);
    }
  g.value.assign(resolution * resolution, 0.0);
  auto cell = [&](double v, std::size_t d) {
    const double f = (v - g.lo[d]) / (g.hi[d] - g.lo[d]);
    return std::min(resolution - 1, static_cast<std::size_t>(f * static_cast<double>(resolution)));
  };
  for (const auto& p : samples) {
    if (!codec.contains(p)) continue;
    g.value[cell(p.y, 1) * resolution + cell(p.x, 0)] += 1.0;
  }
  return g;
}

DensityGrid export_energy_grid(const energy::EnergyFunction& energy, const data::GreyCodec& codec,
                               const seq::LayoutPtr& layout, std::optional<std::size_t> label,
                               std::size_t resolution) {
  if (layout->x_length != 2 * data::GreyCodec::kBits || layout->x_vocab != 2 || layout->variable_length)
    throw std::invalid_argument("export_energy_grid: needs a grey-coded 2D layout");
  if (resolution == 0) throw std::invalid_argument("export_energy_grid: resolution must be > 0");
  if (label && *label >= layout->label_classes()) throw std::out_of_range("export_energy_grid: label out of range");
  DensityGrid g;
  g.resolution = resolution;
  g.lo = {codec.lo(0), codec.lo(1)};
  g.hi = {codec.hi(0), codec.hi(1)};
  g.label = label;
  std::vector<std::size_t> classes;
  if (label) classes.push_back(*label);
  else
    for (std::size_t c = 0; c < layout->label_classes(); ++c) classes.push_back(c);

  const std::size_t cells = resolution * resolution;
  for (std::size_t row = 0; row < resolution; ++row)
    for (std::size_t col = 0; col < resolution; ++col) {
      g.x.push_back(g.lo[0] + (static_cast<double>(col) + 0.5) * (g.hi[0] - g.lo[0]) / resolution);
      g.y.push_back(g.lo[1] + (static_cast<double>(row) + 0.5) * (g.hi[1] - g.lo[1]) / resolution);
    }
  // energies[c][cell]
  std::vector<std::vector<double>> e(classes.size());
  constexpr std::size_t kChunk = 4096;
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const auto y = layout->encode_label(classes[ci]);
    for (std::size_t lo = 0; lo < cells; lo += kChunk) {
      std::vector<seq::State> batch;
      for (std::size_t i = lo; i < std::min(cells, lo + kChunk); ++i)
        batch.push_back(seq::make_terminal(layout, seq::Mode::Prefix, codec.encode({g.x[i], g.y[i]}), y));
      const auto v = energy.energy_values(batch);
      e[ci].insert(e[ci].end(), v.begin(), v.end());
    }
  }
  g.value.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    if (classes.size() == 1) {
      g.value[i] = e[0][i];
      continue;
    }
    double m = std::numeric_limits<double>::infinity();
    for (const auto& col : e) m = std::min(m, col[i]);
    double s = 0.0;
    for (const auto& col : e) s += std::exp(-(col[i] - m));
    g.value[i] = m - std::log(s);
  }
  return g;
}

void write_samples_csv(std::ostream& os, const seq::JointLayout& layout, std::span<const ScoredSample> samples) {
  os << "sequence,label,score\n";
  for (const auto& s : samples) {
    os << data::format_sequence(layout, s.x) << ',' << s.label << ',';
    if (s.score) os << fmt(*s.score);
    os << '\n';
  }
}

void write_samples_csv(const std::filesystem::path& path, const seq::JointLayout& layout,
                       std::span<const ScoredSample> samples) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_samples_csv(os, layout, samples);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<ScoredSample> read_samples_csv(const std::filesystem::path& path, const seq::JointLayout& layout) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "sequence,label,score")
    throw std::runtime_error("samples header must be 'sequence,label,score'");
  std::vector<ScoredSample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw std::runtime_error("line " + std::to_string(lineno) + ": expected 3 columns");
    ScoredSample s;
    s.x = data::parse_sequence(layout, line.substr(0, c1));
    s.label = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
    const std::string score = line.substr(c2 + 1);
    if (!score.empty()) {
      std::size_t used = 0;
      s.score = std::stod(score, &used);
      if (used != score.size()) throw std::runtime_error("line " + std::to_string(lineno) + ": bad score");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<int>> dataset_sequences(const data::LabeledDataset& dataset) {
  std::vector<std::vector<int>> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records) out.push_back(r.x);
  return out;
}

}  // namespace jebgfn::eval
