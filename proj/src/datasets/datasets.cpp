#include "jebgfn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace jebgfn::data {

std::uint32_t grey_encode_level(std::uint32_t q) { return q ^ (q >> 1); }

std::uint32_t grey_decode_level(std::uint32_t g) {
  std::uint32_t q = g;
  for (std::uint32_t shift = g >> 1; shift != 0; shift >>= 1) q ^= shift;
  return q;
}

GreyCodec::GreyCodec(std::array<double, 2> lo, std::array<double, 2> hi) : lo_(lo), hi_(hi) {
  for (std::size_t d = 0; d < 2; ++d)
    if (!(lo_[d] < hi_[d])) throw std::invalid_argument("GreyCodec: need lo < hi in every dimension");
}

GreyCodec GreyCodec::two_moons() { return GreyCodec({-2.5, -2.0}, {3.5, 2.5}); }
GreyCodec GreyCodec::four_gaussians() { return GreyCodec({-5.0, -5.0}, {5.0, 5.0}); }

bool GreyCodec::contains(Point2 p) const {
  return p.x >= lo_[0] && p.x <= hi_[0] && p.y >= lo_[1] && p.y <= hi_[1];
}

std::uint32_t GreyCodec::quantize(double v, std::size_t dim) const {
  if (!(v >= lo_.at(dim) && v <= hi_.at(dim)))
    throw std::out_of_range("GreyCodec: value " + std::to_string(v) + " outside bounds of dimension " +
                            std::to_string(dim));
  const double q = std::round((v - lo_[dim]) / (hi_[dim] - lo_[dim]) * (kLevels - 1));
  return static_cast<std::uint32_t>(std::clamp(q, 0.0, static_cast<double>(kLevels - 1)));
}

double GreyCodec::level_value(std::uint32_t q, std::size_t dim) const {
  if (q >= kLevels) throw std::out_of_range("GreyCodec: level out of range");
  return lo_.at(dim) + static_cast<double>(q) / (kLevels - 1) * (hi_[dim] - lo_[dim]);
}

std::vector<int> GreyCodec::encode(Point2 p) const {
  std::vector<int> bits;
  bits.reserve(2 * kBits);
  for (std::size_t d = 0; d < 2; ++d) {
    const std::uint32_t g = grey_encode_level(quantize(d == 0 ? p.x : p.y, d));
    for (std::size_t b = kBits; b-- > 0;) bits.push_back(static_cast<int>((g >> b) & 1u));
  }
  return bits;
}

Point2 GreyCodec::decode(std::span<const int> bits) const {
  if (bits.size() != 2 * kBits) throw std::invalid_argument("GreyCodec: expected 32 bits");
  double out[2];
  for (std::size_t d = 0; d < 2; ++d) {
    std::uint32_t g = 0;
    for (std::size_t b = 0; b < kBits; ++b) {
      const int bit = bits[d * kBits + b];
      if (bit != 0 && bit != 1) throw std::invalid_argument("GreyCodec: non-binary token");
      g = (g << 1) | static_cast<std::uint32_t>(bit);
    }
    out[d] = level_value(grey_decode_level(g), d);
  }
  return {out[0], out[1]};
}

Point2 two_moons_point(int moon, double t) {
  if (moon == 0) return {std::cos(t), std::sin(t)};
  if (moon == 1) return {1.0 - std::cos(t), 0.5 - std::sin(t)};
  throw std::invalid_argument("two_moons_point: moon must be 0 or 1");
}

std::vector<LabeledPoint> sample_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_two_moons: n must be > 0");
  if (noise < 0.0) throw std::invalid_argument("sample_two_moons: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LabeledPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int moon = static_cast<int>(i % 2);
    Point2 p = two_moons_point(moon, angle(rng));
    if (noise > 0.0) {
      p.x += noise * gauss(rng);
      p.y += noise * gauss(rng);
    }
    out.push_back({p, moon});
  }
  return out;
}

std::array<Point2, 4> four_gaussians_means() {
  const double r = 2.0 * std::numbers::sqrt2;
  return {{{r, 0.0}, {-r, 0.0}, {0.0, r}, {0.0, -r}}};
}

std::vector<LabeledPoint> sample_four_gaussians(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_four_gaussians: n must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> component(0, 3);
  std::normal_distribution<double> gauss(0.0, kFourGaussiansSigma);
  const auto means = four_gaussians_means();
  std::vector<LabeledPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = component(rng);
    const double dx = gauss(rng);
    const double dy = gauss(rng);
    out.push_back({{means[c].x + dx, means[c].y + dy}, c});
  }
  return out;
}

seq::State LabeledDataset::terminal(std::size_t i, seq::Mode mode) const {
  const Record& r = records.at(i);
  return seq::make_terminal(layout, mode, r.x, r.y);
}

std::vector<seq::State> LabeledDataset::terminals(seq::Mode mode) const {
  std::vector<seq::State> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(terminal(i, mode));
  return out;
}

std::size_t LabeledDataset::count_class(std::size_t cls) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const Record& r) {
    return layout->decode_label(r.y) == cls;
  }));
}

seq::LayoutPtr two_moons_layout() { return seq::make_layout({.x_length = 32, .label_slots = 1}); }
seq::LayoutPtr four_gaussians_layout() { return seq::make_layout({.x_length = 32, .label_slots = 2}); }
seq::LayoutPtr mnist_layout() { return seq::make_layout({.x_length = 784, .label_slots = 2}); }

seq::LayoutPtr amp_layout() {
  return seq::make_layout({.x_length = kMaxPeptideLength + 1,
                           .x_vocab = kAminoAcids.size(),
                           .label_slots = 1,
                           .label_vocab = 2,
                           .variable_length = true});
}

LabeledDataset points_to_dataset(std::span<const LabeledPoint> points, const GreyCodec& codec,
                                 seq::LayoutPtr layout) {
  if (layout->x_length != 2 * GreyCodec::kBits)
    throw std::invalid_argument("points_to_dataset: layout needs 32 data slots");
  LabeledDataset d{std::move(layout), {}};
  d.records.reserve(points.size());
  for (const LabeledPoint& lp : points)
    d.records.push_back({codec.encode(lp.p), d.layout->encode_label(static_cast<std::size_t>(lp.label)),
                         std::nullopt, 0});
  return d;
}

namespace {

std::uint32_t read_be32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated IDX file " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

}  // namespace

LabeledDataset load_mnist_binarized(const std::filesystem::path& images, const std::filesystem::path& labels,
                                    const MnistOptions& options) {
  if (options.digits.empty() || options.digits.size() > 4)
    throw std::invalid_argument("load_mnist_binarized: between 1 and 4 digits fit the 2 label bits");
  std::ifstream img = open_binary(images);
  std::ifstream lab = open_binary(labels);
  if (read_be32(img, images) != 0x803) throw std::runtime_error("bad IDX image magic in " + images.string());
  if (read_be32(lab, labels) != 0x801) throw std::runtime_error("bad IDX label magic in " + labels.string());
  const std::uint32_t n = read_be32(img, images);
  const std::uint32_t rows = read_be32(img, images);
  const std::uint32_t cols = read_be32(img, images);
  const std::uint32_t n_labels = read_be32(lab, labels);
  if (rows * cols != 784) throw std::runtime_error("expected 28x28 images in " + images.string());
  if (n != n_labels) throw std::runtime_error("image and label counts differ");

  const double cutoff = options.threshold * 255.0;
  LabeledDataset d{mnist_layout(), {}};
  std::vector<std::size_t> taken(options.digits.size(), 0);
  std::vector<unsigned char> pixels(784);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(pixels.data()), 784))
      throw std::runtime_error("truncated IDX file " + images.string());
    char digit = 0;
    if (!lab.read(&digit, 1)) throw std::runtime_error("truncated IDX file " + labels.string());
    const auto it = std::find(options.digits.begin(), options.digits.end(), static_cast<int>(digit));
    if (it == options.digits.end()) continue;
    const auto cls = static_cast<std::size_t>(it - options.digits.begin());
    if (options.per_digit != 0 && taken[cls] >= options.per_digit) continue;
    ++taken[cls];
    Record r;
    r.x.resize(784);
    for (std::size_t p = 0; p < 784; ++p) r.x[p] = pixels[p] > cutoff ? 1 : 0;
    r.y = d.layout->encode_label(cls);
    d.records.push_back(std::move(r));
  }
  if (d.records.empty()) throw std::runtime_error("no MNIST images matched the digit filter");
  return d;
}

std::vector<int> tokenize_peptide(std::string_view sequence) {
  std::vector<int> out;
  out.reserve(sequence.size());
  for (char c : sequence) {
    const auto pos = kAminoAcids.find(c);
    if (pos == std::string_view::npos)
      throw std::invalid_argument(std::string("invalid residue '") + c + "'");
    out.push_back(static_cast<int>(pos));
  }
  return out;
}

std::string detokenize_peptide(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= kAminoAcids.size())
      throw std::invalid_argument("detokenize_peptide: token out of range");
    out.push_back(kAminoAcids[static_cast<std::size_t>(t)]);
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

bool is_peptide_layout(const seq::JointLayout& l) {
  return l.variable_length && l.x_vocab == kAminoAcids.size();
}

AmpLoad load_amp_csv(const std::filesystem::path& path, double threshold) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty AMP file " + path.string());
  const auto header = split_csv(line);
  if (header.size() != 2 || header[0] != "sequence" || (header[1] != "score" && header[1] != "label"))
    throw std::runtime_error("AMP header must be 'sequence,score' or 'sequence,label'");
  const bool scored = header[1] == "score";

  AmpLoad out{{amp_layout(), {}}, {}};
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    auto reject = [&](std::string why) { out.rejects.push_back({lineno, std::move(why)}); };
    if (cells.size() != 2) {
      reject("expected 2 columns");
      continue;
    }
    const std::string& seq_text = cells[0];
    if (seq_text.empty()) {
      reject("empty sequence");
      continue;
    }
    if (seq_text.size() > kMaxPeptideLength) {
      reject("length " + std::to_string(seq_text.size()) + " is not below 50");
      continue;
    }
    std::vector<int> tokens;
    try {
      tokens = tokenize_peptide(seq_text);
    } catch (const std::invalid_argument& e) {
      reject(e.what());
      continue;
    }
    double value = 0.0;
    if (!parse_double(cells[1], value)) {
      reject("unparseable " + header[1] + " '" + cells[1] + "'");
      continue;
    }
    Record r;
    r.x = std::move(tokens);
    if (scored) {
      r.score = value;
      r.y = {value > threshold ? 1 : 0};
    } else {
      if (value != 0.0 && value != 1.0) {
        reject("label must be 0 or 1");
        continue;
      }
      r.y = {static_cast<int>(value)};
    }
    out.data.records.push_back(std::move(r));
  }
  if (out.data.empty()) throw std::runtime_error("no valid rows in " + path.string());
  return out;
}

LabeledDataset label_by_threshold(LabeledDataset dataset, double threshold) {
  if (dataset.layout->label_slots != 1 || dataset.layout->label_vocab != 2)
    throw std::invalid_argument("label_by_threshold: needs a single binary label slot");
  for (Record& r : dataset.records) {
    if (!r.score) throw std::invalid_argument("label_by_threshold: record without a score");
    r.y = {*r.score > threshold ? 1 : 0};
  }
  return dataset;
}

SyntheticOracle SyntheticOracle::standard() {
  SyntheticOracle o;
  o.motifs = {
      {"KWK", 2.5}, {"LKKL", 3.0}, {"RRW", 2.5}, {"GLF", 2.0},
      {"WW", 1.5},  {"FLP", 1.5},  {"KK", 1.0},  {"RR", 1.0},
  };
  return o;
}

double SyntheticOracle::length_term(std::size_t length) const {
  const double z = (static_cast<double>(length) - preferred_length) / length_scale;
  return offset - length_weight * z * z;
}

double SyntheticOracle::logit(std::string_view sequence) const {
  tokenize_peptide(sequence);  // validates the alphabet
  double z = length_term(sequence.size());
  for (const Motif& m : motifs) {
    std::size_t count = 0;
    for (std::size_t pos = sequence.find(m.pattern); pos != std::string_view::npos && count < count_cap;
         pos = sequence.find(m.pattern, pos + 1))
      ++count;
    z += m.weight * static_cast<double>(count);
  }
  return z;
}

double SyntheticOracle::score(std::string_view sequence) const {
  return 1.0 / (1.0 + std::exp(-logit(sequence)));
}

double SyntheticOracle::score_tokens(std::span<const int> tokens) const {
  return score(detokenize_peptide(tokens));
}

double synthetic_oracle_score(std::string_view sequence) { return SyntheticOracle::standard().score(sequence); }

LabeledDataset generate_amp_corpus(const SyntheticOracle& oracle, const CorpusSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> length(6, 40);
  std::uniform_int_distribution<std::size_t> residue(0, kAminoAcids.size() - 1);
  std::uniform_int_distribution<std::size_t> motif_pick(0, oracle.motifs.size() - 1);
  std::uniform_int_distribution<int> motif_count(0, 3);

  LabeledDataset d{amp_layout(), {}};
  std::set<std::string> seen;
  std::size_t pos = 0, neg = 0;
  const std::size_t max_attempts = 200 * (spec.positives + spec.negatives) + 1000;
  for (std::size_t attempt = 0; attempt < max_attempts && (pos < spec.positives || neg < spec.negatives);
       ++attempt) {
    std::string s;
    const std::size_t len = length(rng);
    for (std::size_t i = 0; i < len; ++i) s.push_back(kAminoAcids[residue(rng)]);
    const int plants = motif_count(rng);
    for (int k = 0; k < plants; ++k) {
      const std::string& m = oracle.motifs[motif_pick(rng)].pattern;
      if (m.size() > s.size()) continue;
      std::uniform_int_distribution<std::size_t> at(0, s.size() - m.size());
      s.replace(at(rng), m.size(), m);
    }
    if (!seen.insert(s).second) continue;
    const double score = oracle.score(s);
    const bool positive = score > spec.threshold;
    if (positive ? pos >= spec.positives : neg >= spec.negatives) continue;
    (positive ? pos : neg) += 1;
    d.records.push_back({tokenize_peptide(s), {positive ? 1 : 0}, score, 0});
  }
  if (pos < spec.positives || neg < spec.negatives)
    throw std::runtime_error("generate_amp_corpus: could not fill the class quotas");
  return d;
}

std::string format_sequence(const seq::JointLayout& l, std::span<const int> x) {
  if (is_peptide_layout(l)) return detokenize_peptide(x);
  std::string out;
  for (std::size_t i = 0; i < x.size(); ++i) out += (i ? " " : "") + std::to_string(x[i]);
  return out;
}

std::vector<int> parse_sequence(const seq::JointLayout& l, const std::string& text) {
  if (is_peptide_layout(l)) return tokenize_peptide(text);
  std::vector<int> out;
  std::stringstream ss(text);
  int v = 0;
  while (ss >> v) out.push_back(v);
  if (!ss.eof()) throw std::invalid_argument("bad token list '" + text + "'");
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& dataset) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  os << "sequence,label,score,round\n";
  for (const Record& r : dataset.records) {
    os << format_sequence(*dataset.layout, r.x) << ',' << dataset.layout->decode_label(r.y) << ',';
    if (r.score) os << *r.score;
    os << ',' << r.round << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

LabeledDataset read_dataset_csv(const std::filesystem::path& path, seq::LayoutPtr layout) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || trim(line) != "sequence,label,score,round")
    throw std::runtime_error("dataset snapshot header must be 'sequence,label,score,round'");
  LabeledDataset d{std::move(layout), {}};
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw std::runtime_error("line " + std::to_string(lineno) + ": expected 4 columns");
    Record r;
    r.x = parse_sequence(*d.layout, cells[0]);
    r.y = d.layout->encode_label(static_cast<std::size_t>(std::stoul(cells[1])));
    if (!cells[2].empty()) {
      double v = 0.0;
      if (!parse_double(cells[2], v)) throw std::runtime_error("line " + std::to_string(lineno) + ": bad score");
      r.score = v;
    }
    r.round = static_cast<std::size_t>(std::stoul(cells[3]));
    d.records.push_back(std::move(r));
  }
  return d;
}

}  // namespace jebgfn::data
