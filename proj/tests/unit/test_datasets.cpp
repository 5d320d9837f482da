#include <cmath>
#include <filesystem>
#include <fstream>
#include <bit>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "jebgfn/datasets.hpp"

using namespace jebgfn;
using namespace jebgfn::data;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("jebgfn_test_" + name);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

void put_be32(std::ofstream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

// Writes a tiny IDX pair; image i has every pixel equal to intensity[i].
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const std::vector<unsigned char>& intensity, const std::vector<unsigned char>& digit,
               std::uint32_t image_magic = 0x803) {
  std::ofstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  put_be32(im, image_magic);
  put_be32(im, static_cast<std::uint32_t>(intensity.size()));
  put_be32(im, 28);
  put_be32(im, 28);
  for (unsigned char v : intensity)
    for (int p = 0; p < 784; ++p) im.put(static_cast<char>(v));
  put_be32(lb, 0x801);
  put_be32(lb, static_cast<std::uint32_t>(digit.size()));
  for (unsigned char d : digit) lb.put(static_cast<char>(d));
}

}  // namespace

TEST_CASE("grey code levels") {
  CHECK(grey_encode_level(2) == 3);  // 0010 -> 0011
  CHECK(grey_encode_level(0) == 0);
  CHECK(grey_decode_level(3) == 2);
  const GreyCodec c = GreyCodec::two_moons();
  const auto bits = c.encode({c.lo(0), c.lo(1)});
  CHECK(bits == std::vector<int>(32, 0));
  // Level 2 in the first dimension, 0 in the second.
  const auto two = c.encode({c.level_value(2, 0), c.lo(1)});
  CHECK(std::vector<int>(two.begin() + 12, two.begin() + 16) == std::vector<int>{0, 0, 1, 1});
  CHECK_THROWS_AS(c.encode({c.hi(0) + 0.01, 0.0}), std::out_of_range);
  CHECK_THROWS_AS(GreyCodec({1.0, 0.0}, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("grey codec round trip within half a cell") {
  std::mt19937_64 rng(1);
  for (const GreyCodec& c : {GreyCodec::two_moons(), GreyCodec::four_gaussians()}) {
    std::uniform_real_distribution<double> ux(c.lo(0), c.hi(0)), uy(c.lo(1), c.hi(1));
    for (int i = 0; i < 10000; ++i) {
      const Point2 p{ux(rng), uy(rng)};
      const Point2 q = c.decode(c.encode(p));
      CHECK(std::abs(q.x - p.x) <= 0.5 * c.cell(0) * (1 + 1e-9));
      CHECK(std::abs(q.y - p.y) <= 0.5 * c.cell(1) * (1 + 1e-9));
    }
  }
}

TEST_CASE("grey adjacency on every level") {
  for (std::uint32_t q = 0; q + 1 < GreyCodec::kLevels; ++q) {
    const std::uint32_t diff = grey_encode_level(q) ^ grey_encode_level(q + 1);
    REQUIRE(std::popcount(diff) == 1);
    REQUIRE(grey_decode_level(grey_encode_level(q)) == q);
  }
}

TEST_CASE("two moons generator") {
  const Point2 a = two_moons_point(0, 0.0);
  CHECK(a.x == 1.0);
  CHECK(a.y == 0.0);
  const Point2 b = two_moons_point(1, 0.0);
  CHECK(b.x == 0.0);
  CHECK(b.y == 0.5);
  const auto pts = sample_two_moons(1000, 0.1, 3);
  std::size_t ones = 0;
  for (const auto& p : pts) ones += p.label;
  CHECK(ones == 500);
  const auto clean = sample_two_moons(200, 0.0, 4);
  for (const auto& p : clean) {
    // Recover the angle and check the point sits on its circle.
    const double cx = p.label == 0 ? 0.0 : 1.0, cy = p.label == 0 ? 0.0 : 0.5;
    CHECK(std::hypot(p.p.x - cx, p.p.y - cy) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(sample_two_moons(10, 0.1, 5).front().p.x == sample_two_moons(10, 0.1, 5).front().p.x);
  CHECK_THROWS_AS(sample_two_moons(0, 0.1, 1), std::invalid_argument);
}

TEST_CASE("four gaussians generator") {
  const auto means = four_gaussians_means();
  CHECK(means[0].x == doctest::Approx(2.8284271247461903));
  CHECK(means[0].y == 0.0);
  CHECK(means[3].y == doctest::Approx(-2.8284271247461903));
  const std::size_t n = 10000;
  const auto pts = sample_four_gaussians(n, 6);
  std::array<double, 4> count{}, sx{}, sxx{};
  for (const auto& p : pts) {
    count[p.label] += 1;
    const double dx = p.p.x - means[p.label].x;
    sx[p.label] += dx;
    sxx[p.label] += dx * dx;
  }
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c = 0; c < 4; ++c) {
    CHECK(std::abs(count[c] - n / 4.0) < 3 * sigma);
    const double mean = sx[c] / count[c];
    CHECK(std::sqrt(sxx[c] / count[c] - mean * mean) == doctest::Approx(0.5).epsilon(0.04));
  }
  const GreyCodec codec = GreyCodec::four_gaussians();
  for (const Point2& m : means)
    for (double dx : {-2.0, 2.0})
      for (double dy : {-2.0, 2.0}) CHECK(codec.contains({m.x + dx, m.y + dy}));
}

TEST_CASE("points become grey-coded records") {
  const std::vector<LabeledPoint> pts{{{0.0, 0.0}, 2}, {{1.0, -1.0}, 3}};
  const auto d = points_to_dataset(pts, GreyCodec::four_gaussians(), four_gaussians_layout());
  REQUIRE(d.size() == 2);
  CHECK(d.records[0].y == std::vector<int>{1, 1});
  CHECK(d.records[1].y == std::vector<int>{1, 0});
  CHECK(d.records[0].x.size() == 32);
  CHECK(d.terminal(0, seq::Mode::Prefix).is_terminal());
  CHECK(d.count_class(2) == 1);
}

TEST_CASE("binarized mnist loader") {
  const auto images = temp_file("img.idx"), labels = temp_file("lab.idx");
  write_idx(images, labels, {0, 200, 128, 255, 10, 90}, {0, 1, 7, 3, 2, 0});
  const auto d = load_mnist_binarized(images, labels);
  REQUIRE(d.size() == 5);  // the 7 is filtered out
  CHECK(d.layout->slot_count() == 786);
  CHECK(d.records[0].x == std::vector<int>(784, 0));
  CHECK(d.records[1].x == std::vector<int>(784, 1));
  CHECK(d.records[2].x == std::vector<int>(784, 1));  // 255 -> digit 3
  for (const auto& r : d.records) CHECK(d.layout->decode_label(r.y) < 4);
  CHECK(d.layout->decode_label(d.records[2].y) == 3);

  const auto capped = load_mnist_binarized(images, labels, {.per_digit = 1});
  CHECK(capped.size() == 4);

  write_idx(images, labels, {0}, {0}, 0x801);
  CHECK_THROWS(load_mnist_binarized(images, labels));
  CHECK_THROWS(load_mnist_binarized(temp_file("missing.idx"), labels));
  std::filesystem::remove(images);
  std::filesystem::remove(labels);
}

TEST_CASE("amp csv ingestion") {
  const auto path = temp_file("amp.csv");
  write_text(path,
             "sequence,score\n"
             "ACDEF,0.9\n"
             "ACBEF,0.9\n" +
                 std::string(50, 'A') + ",0.5\n" + std::string(49, 'K') +
                 ",0.75\n"
                 "GLF,0.76\n"
                 ",0.3\n");
  const auto load = load_amp_csv(path);
  REQUIRE(load.data.size() == 3);
  CHECK(load.data.records[0].x == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(load.data.records[0].y == std::vector<int>{1});
  CHECK(load.data.records[1].y == std::vector<int>{0});  // 0.75 is not above the threshold
  CHECK(load.data.records[2].y == std::vector<int>{1});
  const seq::State t = load.data.terminal(0, seq::Mode::Prefix);
  CHECK(t.token(5) == load.data.layout->end_token());
  REQUIRE(load.rejects.size() == 3);
  CHECK(load.rejects[0].line == 3);
  CHECK(load.rejects[1].line == 4);
  CHECK(load.rejects[2].line == 7);

  write_text(path, "sequence,label\nKK,1\nRR,0\nWW,2\n");
  const auto labelled = load_amp_csv(path);
  CHECK(labelled.data.size() == 2);
  CHECK_FALSE(labelled.data.records[0].score.has_value());
  CHECK(labelled.rejects.size() == 1);

  write_text(path, "seq,score\nKK,1\n");
  CHECK_THROWS(load_amp_csv(path));
  write_text(path, "sequence,score\nXX,1\n");
  CHECK_THROWS(load_amp_csv(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_amp_csv(path));
}

TEST_CASE("thresholding is strict") {
  LabeledDataset d{amp_layout(), {}};
  for (double s : {0.76, 0.75, 0.0}) d.records.push_back({{0}, {1}, s, 0});
  const auto l = label_by_threshold(d);
  CHECK(l.records[0].y[0] == 1);
  CHECK(l.records[1].y[0] == 0);
  CHECK(l.records[2].y[0] == 0);
  d.records.push_back({{0}, {0}, std::nullopt, 0});
  CHECK_THROWS_AS(label_by_threshold(d), std::invalid_argument);
}

TEST_CASE("synthetic oracle") {
  const SyntheticOracle o = SyntheticOracle::standard();
  auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  // Empty sequence: offset and length preference only.
  CHECK(o.score("") == doctest::Approx(logistic(-4.0 - 0.5 * 4.0)).epsilon(1e-15));
  // The heaviest motif alone also contains one KK.
  const double z = -4.0 - 0.5 * std::pow((4.0 - 20.0) / 10.0, 2) + 3.0 + 1.0;
  CHECK(o.score("LKKL") == doctest::Approx(logistic(z)).epsilon(1e-15));
  // Counts are capped.
  CHECK(o.logit("KKKKKKKK") == doctest::Approx(o.length_term(8) + 3.0).epsilon(1e-15));
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> res(0, 19), len(0, 49);
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> t(static_cast<std::size_t>(len(rng)));
    for (int& v : t) v = res(rng);
    const double s = o.score_tokens(t);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  CHECK(synthetic_oracle_score("GLFKWK") == o.score("GLFKWK"));
  CHECK_THROWS_AS(o.score("ABC"), std::invalid_argument);
}

TEST_CASE("generated corpus matches the requested shape") {
  const auto d = generate_amp_corpus(SyntheticOracle::standard());
  CHECK(d.size() == 3219 + 4611);
  CHECK(d.count_class(1) == 3219);
  CHECK(d.count_class(0) == 4611);
  std::set<std::vector<int>> unique;
  for (const auto& r : d.records) {
    CHECK(r.x.size() < 50);
    CHECK(r.x.size() >= 1);
    CHECK((*r.score > 0.75) == (r.y[0] == 1));
    unique.insert(r.x);
  }
  CHECK(unique.size() == d.size());
  CHECK(generate_amp_corpus(SyntheticOracle::standard()).records == d.records);
}

TEST_CASE("dataset snapshot round trip") {
  const auto path = temp_file("snapshot.csv");
  LabeledDataset amp{amp_layout(), {{{0, 5, 19}, {1}, 0.123456789012345678, 0}, {{3}, {0}, std::nullopt, 4}}};
  write_dataset_csv(path, amp);
  CHECK(read_dataset_csv(path, amp_layout()).records == amp.records);
  const auto bits = points_to_dataset(sample_four_gaussians(5, 1), GreyCodec::four_gaussians(),
                                      four_gaussians_layout());
  write_dataset_csv(path, bits);
  CHECK(read_dataset_csv(path, four_gaussians_layout()).records == bits.records);
  std::filesystem::remove(path);
}
