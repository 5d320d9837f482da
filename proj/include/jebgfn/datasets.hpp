#pragma once

// Data sources: grey-coded 2D synthetic tasks, binarized MNIST, AMP peptide
// CSVs, and the deterministic synthetic peptide oracle with its corpus
// generator.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jebgfn/seqspace.hpp"

namespace jebgfn::data {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Reflected binary grey code of a level and its inverse.
std::uint32_t grey_encode_level(std::uint32_t q);
std::uint32_t grey_decode_level(std::uint32_t g);

/// Quantizes each coordinate to 16 bits and grey-codes it, most significant
/// bit first, x bits then y bits.
class GreyCodec {
 public:
  static constexpr std::size_t kBits = 16;
  static constexpr std::uint32_t kLevels = 1u << kBits;

  GreyCodec(std::array<double, 2> lo, std::array<double, 2> hi);
  static GreyCodec two_moons();
  static GreyCodec four_gaussians();

  double lo(std::size_t dim) const { return lo_.at(dim); }
  double hi(std::size_t dim) const { return hi_.at(dim); }
  /// Distance between adjacent quantization levels.
  double cell(std::size_t dim) const { return (hi_.at(dim) - lo_.at(dim)) / (kLevels - 1); }
  bool contains(Point2 p) const;

  /// Throws std::out_of_range outside [lo, hi].
  std::uint32_t quantize(double v, std::size_t dim) const;
  double level_value(std::uint32_t q, std::size_t dim) const;

  std::vector<int> encode(Point2 p) const;
  Point2 decode(std::span<const int> bits) const;

 private:
  std::array<double, 2> lo_;
  std::array<double, 2> hi_;
};

struct LabeledPoint {
  Point2 p;
  int label = 0;
};

/// Noise-free point on moon 0 (upper) or moon 1 (lower) at angle t.
Point2 two_moons_point(int moon, double t);
/// Labels alternate 0, 1, 0, ...; t ~ U[0, pi]; isotropic Gaussian noise.
std::vector<LabeledPoint> sample_two_moons(std::size_t n, double noise, std::uint64_t seed);

inline constexpr double kFourGaussiansSigma = 0.5;
std::array<Point2, 4> four_gaussians_means();
std::vector<LabeledPoint> sample_four_gaussians(std::size_t n, std::uint64_t seed);

struct Record {
  std::vector<int> x;  // data tokens, no END or padding
  std::vector<int> y;  // label tokens
  std::optional<double> score;
  std::size_t round = 0;
  bool operator==(const Record&) const = default;
};

struct LabeledDataset {
  seq::LayoutPtr layout;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::vector<seq::State> terminals(seq::Mode mode) const;
  seq::State terminal(std::size_t i, seq::Mode mode) const;
  /// Records whose label tokens decode to `cls`.
  std::size_t count_class(std::size_t cls) const;
};

seq::LayoutPtr two_moons_layout();       // 32 data bits + 1 label bit
seq::LayoutPtr four_gaussians_layout();  // 32 data bits + 2 label bits
seq::LayoutPtr mnist_layout();           // 784 pixels + 2 label bits
seq::LayoutPtr amp_layout();             // up to 49 residues + END, 1 label slot

LabeledDataset points_to_dataset(std::span<const LabeledPoint> points, const GreyCodec& codec,
                                 seq::LayoutPtr layout);

struct MnistOptions {
  std::vector<int> digits{0, 1, 2, 3};
  double threshold = 0.5;       // pixel on iff intensity / 255 > threshold
  std::size_t per_digit = 2000; // 0 keeps every image
};

/// Reads IDX image (magic 0x803) and label (magic 0x801) files. The label of
/// the k-th selected digit is class k.
LabeledDataset load_mnist_binarized(const std::filesystem::path& images,
                                    const std::filesystem::path& labels,
                                    const MnistOptions& options = {});

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr std::size_t kMaxPeptideLength = 49;
inline constexpr double kAmpThreshold = 0.75;

std::vector<int> tokenize_peptide(std::string_view sequence);  // throws on invalid characters
std::string detokenize_peptide(std::span<const int> tokens);

bool is_peptide_layout(const seq::JointLayout& layout);
/// Residue letters for peptide layouts, space-separated token ids otherwise.
std::string format_sequence(const seq::JointLayout& layout, std::span<const int> x);
std::vector<int> parse_sequence(const seq::JointLayout& layout, const std::string& text);

struct RowReject {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string reason;
};

struct AmpLoad {
  LabeledDataset data;
  std::vector<RowReject> rejects;
};

/// Header `sequence,score` (labels by threshold) or `sequence,label`.
AmpLoad load_amp_csv(const std::filesystem::path& path, double threshold = kAmpThreshold);

/// Label 1 iff score > threshold. Every record needs a score.
LabeledDataset label_by_threshold(LabeledDataset dataset, double threshold = kAmpThreshold);

/// Stand-in peptide scorer: logistic of weighted motif counts plus a
/// quadratic length preference.
struct SyntheticOracle {
  struct Motif {
    std::string pattern;
    double weight;
  };
  std::vector<Motif> motifs;
  std::size_t count_cap = 3;      // occurrences counted per motif
  double offset = -4.0;
  double length_weight = 0.5;
  double preferred_length = 20.0;
  double length_scale = 10.0;

  /// The weights shipped with the repository.
  static SyntheticOracle standard();

  double length_term(std::size_t length) const;
  double logit(std::string_view sequence) const;
  double score(std::string_view sequence) const;
  double score_tokens(std::span<const int> tokens) const;
};

double synthetic_oracle_score(std::string_view sequence);

struct CorpusSpec {
  std::size_t positives = 3219;
  std::size_t negatives = 4611;
  double threshold = kAmpThreshold;
  std::uint64_t seed = 2024;
};

/// Random peptides with planted motifs, scored by the oracle and filled
/// until both class quotas are met. Sequences are unique.
LabeledDataset generate_amp_corpus(const SyntheticOracle& oracle, const CorpusSpec& spec = {});

/// Snapshot CSV: sequence,label,score,round, with sequences written by
/// format_sequence and the label as its class index.
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& dataset);
LabeledDataset read_dataset_csv(const std::filesystem::path& path, seq::LayoutPtr layout);

}  // namespace jebgfn::data
