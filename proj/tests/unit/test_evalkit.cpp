#include <cmath>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "jebgfn/evalkit.hpp"

using namespace jebgfn;
using namespace jebgfn::eval;

namespace {

// Plain recursion, no table.
std::size_t naive_edit(const std::string& a, const std::string& b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::string ra = a.substr(1), rb = b.substr(1);
  if (a[0] == b[0]) return naive_edit(ra, rb);
  return 1 + std::min({naive_edit(ra, b), naive_edit(a, rb), naive_edit(ra, rb)});
}

ScoredSample peptide(const std::string& s, double score, std::size_t label = 1) {
  return {data::tokenize_peptide(s), label, score};
}

// Energy is the squared distance of the decoded point from (1, 0.5).
class BowlEnergy final : public energy::EnergyFunction {
 public:
  explicit BowlEnergy(data::GreyCodec codec) : codec_(codec) {}
  nd::Tensor energies(std::span<const seq::State> states) const override {
    std::vector<double> v;
    for (const auto& s : states) {
      const auto x = s.x_tokens();
      const auto p = codec_.decode(x);
      v.push_back((p.x - 1.0) * (p.x - 1.0) + (p.y - 0.5) * (p.y - 0.5) + 2.0 * s.label_tokens()[0]);
    }
    return nd::Tensor::constant({states.size()}, std::move(v));
  }
  nd::ParamSet& params() override { return params_; }
  const nd::ParamSet& params() const override { return params_; }

 private:
  data::GreyCodec codec_;
  nd::ParamSet params_;
};

}  // namespace

TEST_CASE("levenshtein small cases") {
  CHECK(levenshtein("AB", "BA") == 2);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("", "ACD") == 3);
  CHECK(levenshtein("ACD", "ACD") == 0);
  const std::vector<int> a{1, 2, 3}, b{2, 3};
  CHECK(levenshtein(a, b) == 1);
}

TEST_CASE("levenshtein agrees with plain recursion") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 6), ch(0, 2);
  for (int trial = 0; trial < 300; ++trial) {
    std::string a, b;
    for (int i = len(rng); i > 0; --i) a += static_cast<char>('A' + ch(rng));
    for (int i = len(rng); i > 0; --i) b += static_cast<char>('A' + ch(rng));
    REQUIRE(levenshtein(a, b) == naive_edit(a, b));
    REQUIRE(levenshtein(a, b) == levenshtein(b, a));
  }
}

TEST_CASE("metrics on a hand-sized example") {
  const std::vector<ScoredSample> samples{peptide("AC", 0.9), peptide("AD", 0.8), peptide("CCC", 0.5)};
  const std::vector<std::vector<int>> initial{data::tokenize_peptide("AC")};
  const auto r = compute_metrics(samples, initial, 2);
  CHECK(r.performance == doctest::Approx(0.85));
  CHECK(r.diversity == 1.0);
  CHECK(r.novelty == 0.5);
  CHECK(r.k == 2);
  CHECK(r.sample_count == 3);

  const auto all = compute_metrics(samples, initial, 3);
  // pairs: AC-AD 1, AC-CCC 2, AD-CCC 3
  CHECK(all.diversity == doctest::Approx(2.0));
  // novelty: 0, 1, 2
  CHECK(all.novelty == doctest::Approx(1.0));
}

TEST_CASE("metrics match a brute-force oracle") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(1, 8), aa(0, 19);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_peptide = [&] {
    std::string s;
    for (int i = len(rng); i > 0; --i) s += data::kAminoAcids[aa(rng)];
    return s;
  };
  std::vector<ScoredSample> samples;
  for (int i = 0; i < 60; ++i) samples.push_back(peptide(random_peptide(), std::round(u(rng) * 10) / 10));
  std::vector<std::vector<int>> initial;
  for (int i = 0; i < 25; ++i) initial.push_back(data::tokenize_peptide(random_peptide()));
  const std::size_t k = 15;

  // Oracle: selection sort by (score desc, tokens asc), then direct sums.
  std::vector<bool> used(samples.size(), false);
  std::vector<const ScoredSample*> best;
  for (std::size_t n = 0; n < k; ++n) {
    const ScoredSample* pick = nullptr;
    std::size_t at = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (used[i]) continue;
      const auto& s = samples[i];
      if (!pick || *s.score > *pick->score || (*s.score == *pick->score && s.x < pick->x)) pick = &s, at = i;
    }
    used[at] = true;
    best.push_back(pick);
  }
  double perf = 0, div = 0, nov = 0;
  for (auto* s : best) perf += *s->score;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) div += static_cast<double>(levenshtein(best[i]->x, best[j]->x));
  for (auto* s : best) {
    std::size_t m = std::numeric_limits<std::size_t>::max();
    for (const auto& r : initial) m = std::min(m, levenshtein(s->x, r));
    nov += static_cast<double>(m);
  }
  const auto r = compute_metrics(samples, initial, k);
  CHECK(r.performance == doctest::Approx(perf / k).epsilon(1e-12));
  CHECK(r.diversity == doctest::Approx(div / (k * (k - 1.0))).epsilon(1e-12));
  CHECK(r.novelty == doctest::Approx(nov / k).epsilon(1e-12));
}

TEST_CASE("top-K breaks score ties by token order") {
  const std::vector<ScoredSample> samples{peptide("W", 0.5), peptide("C", 0.5), peptide("A", 0.4),
                                          peptide("D", 0.5)};
  const auto idx = top_k(samples, 3);
  CHECK(idx == std::vector<std::size_t>{1, 3, 0});
}

TEST_CASE("metrics preconditions") {
  const std::vector<ScoredSample> samples{peptide("AC", 0.9)};
  const std::vector<std::vector<int>> initial{{0}};
  CHECK_THROWS_AS(compute_metrics(samples, initial, 2), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(samples, initial, 0), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(samples, {}, 1), std::invalid_argument);
  std::vector<ScoredSample> unscored{{{0}, 0, std::nullopt}};
  CHECK_THROWS_AS(compute_metrics(unscored, initial, 1), std::invalid_argument);
}

TEST_CASE("metrics report text carries every field") {
  MetricsReport r;
  r.performance = 0.25;
  r.k = 100;
  const auto t = r.to_text();
  CHECK(t.find("performance = 0.25\n") != std::string::npos);
  CHECK(t.find("k = 100\n") != std::string::npos);
  CHECK(t.find("distance = levenshtein\n") != std::string::npos);
  CHECK(t.find("novelty_definition = ") != std::string::npos);
}

TEST_CASE("total variation") {
  const std::vector<double> p{0.5, 0.5}, q{0.75, 0.25};
  CHECK(tv_distance(p, q) == doctest::Approx(0.25));
  CHECK(tv_distance(p, p) == 0.0);
  const std::vector<double> three{0.2, 0.3, 0.5}, bad{0.5, 0.6};
  CHECK_THROWS_AS(tv_distance(p, three), std::invalid_argument);
  CHECK_THROWS_AS(tv_distance(p, bad), std::invalid_argument);
}

TEST_CASE("mode accuracy") {
  const auto means = data::four_gaussians_means();
  const double s = data::kFourGaussiansSigma;
  SUBCASE("definition") {
    const std::vector<data::Point2> pts{means[0], means[1], {means[2].x + 3.1 * s, means[2].y}, means[3]};
    const std::vector<int> labels{0, 1, 2, 0};
    CHECK(mode_accuracy(pts, labels, means, s) == doctest::Approx(0.5));
  }
  SUBCASE("uniform points conditioned on label 0 hit the disk area ratio") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::vector<data::Point2> xy(200000);
    for (auto& p : xy) p = {u(rng), u(rng)};
    const std::vector<int> labels(xy.size(), 0);
    // The 3-sigma disk lies inside the box and inside the Voronoi cell of mean 0.
    const double expected = std::numbers::pi * (3 * s) * (3 * s) / 100.0;
    CHECK(std::abs(mode_accuracy(xy, labels, means, s) - expected) < 3e-3);
  }
  SUBCASE("true samples hit the 2D 3-sigma mass") {
    const auto pts = data::sample_four_gaussians(40000, 3);
    std::vector<data::Point2> xy;
    std::vector<int> labels;
    for (const auto& p : pts) xy.push_back(p.p), labels.push_back(p.label);
    // P(|N(0, s^2 I_2)| <= 3s) = 1 - exp(-9/2); binomial sd is about 5e-4.
    CHECK(std::abs(mode_accuracy(xy, labels, means, s) - (1.0 - std::exp(-4.5))) < 3e-3);
  }
}

TEST_CASE("energy grid of a zero model") {
  const auto layout = data::two_moons_layout();
  const auto codec = data::GreyCodec::two_moons();
  energy::EnergyModel e(layout, {.hidden = 8, .hidden_layers = 1}, 1);
  e.zero_parameters();
  const auto with_label = export_energy_grid(e, codec, layout, 1, 4);
  REQUIRE(with_label.value.size() == 16);
  for (double v : with_label.value) CHECK(v == 0.0);
  const auto free = export_energy_grid(e, codec, layout, std::nullopt, 4);
  for (double v : free.value) CHECK(v == doctest::Approx(-std::log(2.0)));
  // Cell centres.
  CHECK(free.x[0] == doctest::Approx(-2.5 + 0.75));
  CHECK(free.y[4] == doctest::Approx(-2.0 + 1.5 * 4.5 / 4));
}

TEST_CASE("energy grid minimum and free energy") {
  const auto layout = data::two_moons_layout();
  const auto codec = data::GreyCodec::two_moons();
  BowlEnergy e(codec);
  const auto g = export_energy_grid(e, codec, layout, 0, 24);
  const auto i = g.argmin();
  CHECK(std::abs(g.x[i] - 1.0) <= 0.5 * 6.0 / 24 + 1e-9);
  CHECK(std::abs(g.y[i] - 0.5) <= 0.5 * 4.5 / 24 + 1e-9);
  // F = -log(e^-E0 + e^-(E0+2)) = E0 - log(1 + e^-2)
  const auto f = export_energy_grid(e, codec, layout, std::nullopt, 24);
  for (std::size_t c = 0; c < g.value.size(); c += 37)
    CHECK(f.value[c] == doctest::Approx(g.value[c] - std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK_THROWS_AS(export_energy_grid(e, codec, layout, 2, 4), std::out_of_range);
  CHECK_THROWS_AS(export_energy_grid(e, codec, data::amp_layout(), 0, 4), std::invalid_argument);

  const auto path = std::filesystem::temp_directory_path() / "jebgfn_test_grid.csv";
  g.write_csv(path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "x,y,value");
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 24 * 24);
}

TEST_CASE("samples CSV round trip reproduces metrics bitwise") {
  const auto layout = data::amp_layout();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoredSample> samples;
  for (const char* s : {"KWKLLKK", "ACDE", "GLFDIVKKVV", "W", "RRWKK", "LKKLLKKL"})
    samples.push_back(peptide(s, u(rng)));
  const auto path = std::filesystem::temp_directory_path() / "jebgfn_test_samples.csv";
  write_samples_csv(path, *layout, samples);
  const auto back = read_samples_csv(path, *layout);
  CHECK(back == samples);
  const std::vector<std::vector<int>> initial{data::tokenize_peptide("KWK")};
  CHECK(compute_metrics(back, initial, 4) == compute_metrics(samples, initial, 4));

  const auto bits = data::two_moons_layout();
  const std::vector<ScoredSample> unscored{{std::vector<int>(32, 1), 1, std::nullopt}};
  write_samples_csv(path, *bits, unscored);
  CHECK(read_samples_csv(path, *bits) == unscored);
}

TEST_CASE("sample count grid") {
  const auto codec = data::GreyCodec::two_moons();  // [-2.5, 3.5] x [-2, 2.5]
  // Cells are 1.5 wide and 1.125 tall at resolution 4.
  const std::vector<data::Point2> pts{{-2.5, -2.0}, {3.5, 2.5}, {0.0, 0.0}, {0.1, 0.2}, {10.0, 0.0}};
  const auto g = sample_count_grid(pts, codec, 1, 4);
  REQUIRE(g.value.size() == 16);
  CHECK(g.value[0] == 1.0);
  CHECK(g.value[15] == 1.0);
  CHECK(g.value[1 * 4 + 1] == 2.0);
  CHECK(std::accumulate(g.value.begin(), g.value.end(), 0.0) == 4.0);
  CHECK(g.label == std::optional<std::size_t>(1));
  CHECK(g.x == export_energy_grid(energy::EnergyModel(data::two_moons_layout(), {.hidden = 4, .hidden_layers = 1}, 2),
                                  codec, data::two_moons_layout(), 0, 4).x);
  CHECK_THROWS_AS(sample_count_grid(pts, codec, std::nullopt, 0), std::invalid_argument);
}
