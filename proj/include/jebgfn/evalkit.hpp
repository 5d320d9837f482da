#pragma once

// Sample-quality metrics, exact-distribution comparisons, energy grids and
// the CSV/text formats the command-line tool reads and writes.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jebgfn/datasets.hpp"
#include "jebgfn/energy.hpp"

namespace jebgfn::eval {

/// Unit-cost edit distance.
std::size_t levenshtein(std::span<const int> a, std::span<const int> b);
std::size_t levenshtein(std::string_view a, std::string_view b);

struct ScoredSample {
  std::vector<int> x;
  std::size_t label = 0;
  std::optional<double> score;
  bool operator==(const ScoredSample&) const = default;
};

struct MetricsReport {
  double performance = 0.0;  // mean score of the top K
  double diversity = 0.0;    // mean pairwise distance within the top K
  double novelty = 0.0;      // mean over the top K of the minimum distance to the initial data
  std::size_t k = 0;
  std::size_t sample_count = 0;
  std::string distance = "levenshtein";
  std::string novelty_definition = "mean-min-distance-to-initial";

  std::string to_text() const;
  bool operator==(const MetricsReport&) const = default;
};

/// Indices of the K best samples: score descending, ties by ascending
/// token sequence.
std::vector<std::size_t> top_k(std::span<const ScoredSample> samples, std::size_t k);

MetricsReport compute_metrics(std::span<const ScoredSample> samples,
                              std::span<const std::vector<int>> initial, std::size_t k);

/// Half the L1 distance between two distributions on the same support.
double tv_distance(std::span<const double> p, std::span<const double> q);

/// exp(-E) / Z over a table of energies.
std::vector<double> boltzmann(std::span<const double> energies);

/// Fraction of samples whose nearest mean is the conditioning label and lies
/// within 3 sigma.
double mode_accuracy(std::span<const data::Point2> samples, std::span<const int> labels,
                     std::span<const data::Point2> means, double sigma);

struct DensityGrid {
  std::size_t resolution = 0;
  std::array<double, 2> lo{};
  std::array<double, 2> hi{};
  std::optional<std::size_t> label;  // empty: free energy over all labels
  std::vector<double> x, y, value;   // row-major, resolution^2 cells

  void write_csv(const std::filesystem::path& path) const;
  /// Index of the lowest value.
  std::size_t argmin() const;
};

/// Energy at every cell centre of the codec box. Without a label the value is
/// the free energy -log sum_y exp(-E(x, y)).
DensityGrid export_energy_grid(const energy::EnergyFunction& energy, const data::GreyCodec& codec,
                               const seq::LayoutPtr& layout, std::optional<std::size_t> label,
                               std::size_t resolution);

/// Histogram of decoded samples over the codec box, same cell layout as
/// export_energy_grid. Samples outside the box are dropped.
DensityGrid sample_count_grid(std::span<const data::Point2> samples, const data::GreyCodec& codec,
                              std::optional<std::size_t> label, std::size_t resolution);

/// `sequence,label,score` with scores printed to 17 significant digits.
void write_samples_csv(std::ostream& os, const seq::JointLayout& layout, std::span<const ScoredSample> samples);
void write_samples_csv(const std::filesystem::path& path, const seq::JointLayout& layout,
                       std::span<const ScoredSample> samples);
std::vector<ScoredSample> read_samples_csv(const std::filesystem::path& path, const seq::JointLayout& layout);

/// Sequences of a dataset, for novelty.
std::vector<std::vector<int>> dataset_sequences(const data::LabeledDataset& dataset);

}  // namespace jebgfn::eval
