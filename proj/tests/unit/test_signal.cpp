#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "amc/error.hpp"
#include "amc/signal.hpp"
#include "amc/util.hpp"

using namespace amc;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.classes = {"BPSK", "QPSK"};
  c.snr_grid_db = {10.0};
  c.frames_per_cell = 50;
  c.seed = 7;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("amc_test_signal_" + name)).string();
}

}  // namespace

TEST_CASE("generated dataset has the requested shape") {
  const auto d = generate_dataset(small_config());
  CHECK(d.size() == 100);
  CHECK(d.num_classes() == 2);
  for (const auto& f : d.frames) {
    CHECK(f.samples.size() == 2 * 128);
    CHECK(f.snr_db == 10.0f);
  }
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("generation is deterministic") {
  const auto a = generate_dataset(small_config());
  const auto b = generate_dataset(small_config());
  CHECK(encode_dataset(a) == encode_dataset(b));
  auto other = small_config();
  other.seed = 8;
  CHECK(generate_dataset(other).content_hash() != a.content_hash());
}

TEST_CASE("generator rejects bad configs") {
  auto c = small_config();
  c.classes = {"BPSK", "OOK"};
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  c = small_config();
  c.snr_grid_db.clear();
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  c = small_config();
  c.classes = {"BPSK"};
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  CHECK_THROWS_AS(snr_grid(0, -2, 2), ConfigError);
}

TEST_CASE("modulation names") {
  CHECK(parse_modulation("qam16") == Modulation::k16qam);
  CHECK(parse_modulation("16QAM") == Modulation::k16qam);
  for (auto m : all_modulations()) CHECK(parse_modulation(modulation_name(m)) == m);
  CHECK(snr_grid(-20, 18, 2).size() == 20);
}

TEST_CASE("BPSK symbols recovered by a matched filter at high SNR") {
  std::mt19937_64 rng(21);
  const std::size_t sps = 8, half = 8, n = 1024;
  const auto clean = synthesize_clean(Modulation::kBpsk, n, sps, 0.35, half, rng);
  IqFrame frame;
  frame.samples.resize(2 * n);
  for (std::size_t t = 0; t < n; ++t) {
    frame.samples[t] = static_cast<float>(clean.i[t]);
    frame.samples[n + t] = static_cast<float>(clean.q[t]);
  }
  const auto noisy = add_awgn(frame, 60.0, rng);
  const auto taps = rrc_taps(sps, 0.35, half);
  const std::size_t reach = half * sps;
  std::size_t checked = 0;
  for (std::size_t k = 0; k < clean.symbol_i.size(); ++k) {
    const std::size_t peak = clean.timing_offset + k * sps;
    if (peak < reach || peak + reach >= n) continue;
    double mi = 0.0, mq = 0.0;
    for (std::size_t j = 0; j < taps.size(); ++j) {
      mi += taps[j] * noisy.i(peak - reach + j);
      mq += taps[j] * noisy.q(peak - reach + j);
    }
    CHECK(std::abs(mi / clean.amplitude - clean.symbol_i[k]) < 0.01);
    CHECK(std::abs(mq / clean.amplitude) < 0.01);
    CHECK(std::abs(std::abs(clean.symbol_i[k]) - 1.0) < 1e-12);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("AWGN limits and Monte-Carlo power") {
  std::mt19937_64 rng(2);
  IqFrame unit;
  unit.samples.assign(256, 0.0f);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : unit.samples) v = static_cast<float>(g(rng));
  const double scale = std::sqrt(128.0 / signal_power(unit));
  for (auto& v : unit.samples) v = static_cast<float>(v * scale);
  const double p = signal_power(unit);

  const auto quiet = add_awgn(unit, 200.0, rng);
  for (std::size_t k = 0; k < 256; ++k)
    CHECK(std::abs(quiet.samples[k] - unit.samples[k]) <= 1e-8 * std::max(1.0f, std::abs(unit.samples[k])));

  double total = 0.0, two = 0.0;
  const int frames = 10000;
  std::vector<double> clean(unit.samples.begin(), unit.samples.end());
  for (int f = 0; f < frames; ++f) {
    const auto a = add_awgn(unit, 0.0, rng);
    const auto b = add_awgn(unit, 0.0, rng);
    double na = 0.0;
    std::vector<double> both(256);
    for (std::size_t k = 0; k < 256; ++k) {
      const double da = static_cast<double>(a.samples[k]) - clean[k];
      const double db = static_cast<double>(b.samples[k]) - clean[k];
      na += da * da;
      both[k] = clean[k] + da + db;
    }
    total += na / 128.0;
    two += std::pow(10.0, -measure_snr_db(clean, both) / 10.0);
  }
  CHECK(std::abs(total / frames - p / 128.0) < 0.02);
  CHECK(10.0 * std::log10(1.0 / (two / frames)) == doctest::Approx(-10.0 * std::log10(2.0)).epsilon(0.02));
  IqFrame zero;
  zero.samples.assign(8, 0.0f);
  CHECK_THROWS_AS(add_awgn(zero, 10.0, rng), NumericError);
}

TEST_CASE("signal power") {
  IqFrame zero;
  zero.samples.assign(256, 0.0f);
  CHECK(signal_power(zero) == 0.0);
  IqFrame ones;
  ones.samples.assign(256, 0.0f);
  std::fill(ones.samples.begin(), ones.samples.begin() + 128, 1.0f);
  CHECK(signal_power(ones) == 128.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> v(256);
  for (auto& x : v) x = u(rng);
  // Two-pass oracle: square first, then a pairwise sum.
  std::vector<double> sq(v.size());
  std::transform(v.begin(), v.end(), sq.begin(), [](double x) { return x * x; });
  while (sq.size() > 1) {
    std::vector<double> next;
    for (std::size_t i = 0; i + 1 < sq.size(); i += 2) next.push_back(sq[i] + sq[i + 1]);
    if (sq.size() % 2) next.push_back(sq.back());
    sq = next;
  }
  CHECK(std::abs(signal_power(v) - sq[0]) < 1e-10 * sq[0]);
}

TEST_CASE("measured SNR agrees with tags") {
  GeneratorConfig c;
  c.classes = {"BPSK", "QPSK", "8PSK", "QAM16", "PAM4", "GFSK", "CPFSK"};
  c.snr_grid_db = {-10.0, 0.0, 10.0, 18.0};
  c.frames_per_cell = 100;
  c.seed = 3;
  for (bool exact : {true, false}) {
    c.exact_snr = exact;
    for (std::size_t ci = 0; ci < c.classes.size(); ++ci) {
      for (std::size_t si = 0; si < c.snr_grid_db.size(); ++si) {
        double mean = 0.0;
        for (const auto& pair : generate_cell_with_reference(c, ci, si)) {
          std::vector<double> noisy(pair.noisy.samples.begin(), pair.noisy.samples.end());
          const double m = measure_snr_db(pair.clean, noisy);
          if (exact) CHECK(std::abs(m - c.snr_grid_db[si]) < 0.7);
          mean += m;
        }
        mean /= 100.0;
        CHECK(std::abs(mean - c.snr_grid_db[si]) < 0.2);
      }
    }
  }
}

TEST_CASE("frames are unit power when normalized") {
  const auto d = generate_dataset(small_config());
  for (const auto& f : d.frames) CHECK(signal_power(f) == doctest::Approx(128.0).epsilon(1e-5));
}

TEST_CASE("binary format round trip and validation") {
  auto c = small_config();
  c.snr_grid_db = {0.0, 10.0};
  const auto d = generate_dataset(c);
  const auto path = temp_path("rt.iqds");
  save_dataset(d, path);
  CHECK(load_dataset(path) == d);

  auto bytes = encode_dataset(d);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "IQDS");
  ByteReader header{std::span<const std::uint8_t>(bytes)};
  header.raw(4);
  CHECK(header.u32() == kDatasetVersion);
  CHECK(header.u32() == 2);
  CHECK(header.u32() == 128);
  CHECK(header.u64() == d.size());

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  for (std::size_t cut : {std::size_t{10}, std::size_t{32 + 500}, bytes.size() - 3}) {
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_dataset(truncated), TruncatedError);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_dataset(extra), FormatError);
  CHECK_THROWS_AS(load_dataset(temp_path("missing.iqds")), IoError);
}

TEST_CASE("split arithmetic") {
  SUBCASE("stratified halves") {
    const auto d = generate_dataset(small_config());
    const auto s = split(d, {0.5, 1, true});
    CHECK(s.train.size() == 50);
    CHECK(s.test.size() == 50);
    for (const auto* half : {&s.train, &s.test}) {
      std::size_t zeros = 0;
      for (const auto& f : half->frames) zeros += f.label == 0;
      CHECK(zeros == 25);
    }
    CHECK(s.train.provenance.role == "train");
    CHECK(s.test.provenance.role == "test");
    CHECK(s.train.provenance.split_id == s.test.provenance.split_id);
    CHECK(s.train.provenance.parent_hash == d.content_hash());
  }
  SUBCASE("floor plus remainder") {
    auto c = small_config();
    c.classes = {"BPSK", "QPSK"};
    c.frames_per_cell = 5;
    const auto d = generate_dataset(c);
    const auto s = split(d, {0.999, 4, true});
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);
    const auto one = split(subset(d, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), {0.999, 4, false});
    CHECK(one.train.size() == 9);
    CHECK(one.test.size() == 1);
  }
  SUBCASE("determinism") {
    const auto d = generate_dataset(small_config());
    CHECK(split(d, {0.5, 9, true}).train == split(d, {0.5, 9, true}).train);
    CHECK(split_id(d, {0.5, 9, true}) != split_id(d, {0.5, 10, true}));
  }
  SUBCASE("invalid fraction") {
    const auto d = generate_dataset(small_config());
    CHECK_THROWS_AS(split(d, {0.0, 1, true}), ConfigError);
    CHECK_THROWS_AS(split(d, {1.0, 1, true}), ConfigError);
  }
}

TEST_CASE("split is a disjoint exhaustive partition over random configs") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    GeneratorConfig c;
    c.classes = {"BPSK", "QPSK", "8PSK"};
    c.snr_grid_db = snr_grid(0, 2.0 * static_cast<double>(rng() % 3), 2);
    c.frames_per_cell = 1 + rng() % 12;
    c.length = 16;
    c.seed = rng();
    const auto d = generate_dataset(c);
    const double frac = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    const bool strat = rng() % 2;
    const auto s = split(d, {frac, rng(), strat});
    CHECK(s.train.size() + s.test.size() == d.size());
    std::multiset<std::vector<float>> all, parts;
    for (const auto& f : d.frames) all.insert(f.samples);
    for (const auto& f : s.train.frames) parts.insert(f.samples);
    for (const auto& f : s.test.frames) parts.insert(f.samples);
    CHECK(all == parts);
    if (strat) {
      const std::size_t cell = c.frames_per_cell;
      const auto per_cell = static_cast<std::size_t>(std::floor(frac * static_cast<double>(cell)));
      CHECK(s.train.size() == per_cell * c.classes.size() * c.snr_grid_db.size());
    }
  }
}

TEST_CASE("subset, filter and stratified sampling") {
  auto c = small_config();
  c.snr_grid_db = {0.0, 10.0};
  const auto d = generate_dataset(c);
  CHECK(filter_snr(d, 10.0).size() == 100);
  const auto idx = stratified_sample(d, 7, 5);
  CHECK(idx.size() == 14);
  CHECK(stratified_sample(d, 7, 5) == idx);
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
}
