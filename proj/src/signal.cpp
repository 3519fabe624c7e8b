#include "amc/signal.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <numbers>

#include "amc/error.hpp"
#include "amc/util.hpp"

namespace amc {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'I', 'Q', 'D', 'S'};
constexpr std::size_t kHeaderBytes = 32;

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::size_t record_bytes(std::size_t n) { return 2 * n * 4 + 4 + 2; }

std::vector<std::complex<double>> constellation(Modulation m) {
  using C = std::complex<double>;
  std::vector<C> pts;
  switch (m) {
    case Modulation::kBpsk:
      pts = {C(-1, 0), C(1, 0)};
      break;
    case Modulation::kQpsk: {
      const double a = 1.0 / std::numbers::sqrt2;
      pts = {C(a, a), C(-a, a), C(-a, -a), C(a, -a)};
      break;
    }
    case Modulation::k8psk:
      for (int k = 0; k < 8; ++k) pts.push_back(std::polar(1.0, 2.0 * std::numbers::pi * k / 8.0));
      break;
    case Modulation::k16qam: {
      const double s = 1.0 / std::sqrt(10.0);
      for (int a : {-3, -1, 1, 3})
        for (int b : {-3, -1, 1, 3}) pts.emplace_back(a * s, b * s);
      break;
    }
    case Modulation::kPam4: {
      const double s = 1.0 / std::sqrt(5.0);
      for (int a : {-3, -1, 1, 3}) pts.emplace_back(a * s, 0.0);
      break;
    }
    default:
      break;
  }
  return pts;
}

struct Window {
  std::size_t start;   // first sample of the frame in stream coordinates
  std::size_t first;   // index of the first symbol whose peak is in the frame
  std::size_t offset;  // peak position of that symbol inside the frame
};

Window pick_window(std::size_t lead_symbols, std::size_t sps, std::mt19937_64& rng) {
  const std::size_t phase = rng() % sps;
  Window w{};
  w.start = lead_symbols * sps + phase;
  w.first = (w.start + sps - 1) / sps;
  w.offset = w.first * sps - w.start;
  return w;
}

CleanFrame synth_linear(Modulation m, std::size_t n, std::size_t sps, double rolloff, std::size_t half_span,
                        std::mt19937_64& rng) {
  const auto alphabet = constellation(m);
  const auto taps = rrc_taps(sps, rolloff, half_span);
  const std::size_t lead = half_span + 1;
  const std::size_t total_symbols = n / sps + 2 * lead + 2;
  std::vector<std::complex<double>> sym(total_symbols);
  for (auto& s : sym) s = alphabet[rng() % alphabet.size()];
  const Window w = pick_window(lead, sps, rng);

  CleanFrame out;
  out.i.assign(n, 0.0);
  out.q.assign(n, 0.0);
  out.timing_offset = w.offset;
  const auto centre = static_cast<std::ptrdiff_t>(half_span * sps);
  for (std::size_t t = 0; t < n; ++t) {
    const auto pos = static_cast<std::ptrdiff_t>(w.start + t);
    std::complex<double> acc = 0.0;
    const std::ptrdiff_t k_lo = std::max<std::ptrdiff_t>(0, (pos - centre + static_cast<std::ptrdiff_t>(sps) - 1) /
                                                                 static_cast<std::ptrdiff_t>(sps));
    const std::ptrdiff_t k_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(total_symbols) - 1,
                                                         (pos + centre) / static_cast<std::ptrdiff_t>(sps));
    for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) {
      const std::ptrdiff_t tap = pos - k * static_cast<std::ptrdiff_t>(sps) + centre;
      acc += sym[static_cast<std::size_t>(k)] * taps[static_cast<std::size_t>(tap)];
    }
    out.i[t] = acc.real();
    out.q[t] = acc.imag();
  }
  for (std::size_t k = w.first; k * sps < w.start + n; ++k) {
    out.symbol_i.push_back(sym[k].real());
    out.symbol_q.push_back(sym[k].imag());
  }
  return out;
}

CleanFrame synth_fsk(bool gaussian, std::size_t n, std::size_t sps, std::mt19937_64& rng) {
  constexpr double kBt = 0.3;
  const double h = gaussian ? 0.35 : 0.5;
  const std::size_t lead = 4;
  const std::size_t total_symbols = n / sps + 2 * lead + 2;
  std::vector<double> sym(total_symbols);
  for (auto& s : sym) s = (rng() & 1u) ? 1.0 : -1.0;
  const Window w = pick_window(lead, sps, rng);

  const std::size_t len = total_symbols * sps;
  std::vector<double> freq(len);
  for (std::size_t t = 0; t < len; ++t) freq[t] = sym[t / sps];
  if (gaussian) {
    const double sigma = std::sqrt(std::log(2.0)) / (2.0 * std::numbers::pi * kBt) * static_cast<double>(sps);
    const auto half = static_cast<std::ptrdiff_t>(2 * sps);
    std::vector<double> g;
    double total = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      g.push_back(std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma)));
      total += g.back();
    }
    for (auto& v : g) v /= total;
    std::vector<double> smooth(len, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -half; k <= half; ++k) {
        const auto idx = static_cast<std::ptrdiff_t>(t) + k;
        const double v = (idx < 0) ? sym.front() : (idx >= static_cast<std::ptrdiff_t>(len) ? sym.back() : freq[idx]);
        acc += g[static_cast<std::size_t>(k + half)] * v;
      }
      smooth[t] = acc;
    }
    freq = std::move(smooth);
  }
  CleanFrame out;
  out.i.assign(n, 0.0);
  out.q.assign(n, 0.0);
  out.timing_offset = w.offset;
  double phase = 0.0;
  for (std::size_t t = 0; t < w.start + n; ++t) {
    phase += std::numbers::pi * h * freq[t] / static_cast<double>(sps);
    if (t >= w.start) {
      out.i[t - w.start] = std::cos(phase);
      out.q[t - w.start] = std::sin(phase);
    }
  }
  for (std::size_t k = w.first; k * sps < w.start + n; ++k) {
    out.symbol_i.push_back(sym[k]);
    out.symbol_q.push_back(0.0);
  }
  return out;
}

json provenance_json(const Provenance& p) {
  return json{{"source", p.source},   {"config_hash", p.config_hash}, {"parent_hash", p.parent_hash},
              {"split_id", p.split_id}, {"role", p.role},             {"normalized", p.normalized}};
}

Provenance provenance_from(const json& j) {
  Provenance p;
  p.source = j.value("source", "");
  p.config_hash = j.value("config_hash", "");
  p.parent_hash = j.value("parent_hash", "");
  p.split_id = j.value("split_id", "");
  p.role = j.value("role", "");
  p.normalized = j.value("normalized", true);
  return p;
}

void write_records(ByteWriter& w, const Dataset& d) {
  for (const auto& f : d.frames) {
    for (float v : f.samples) w.f32(v);
    w.f32(f.snr_db);
    w.u16(f.label);
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view modulation_name(Modulation m) {
  switch (m) {
    case Modulation::kBpsk: return "BPSK";
    case Modulation::kQpsk: return "QPSK";
    case Modulation::k8psk: return "8PSK";
    case Modulation::k16qam: return "QAM16";
    case Modulation::kPam4: return "PAM4";
    case Modulation::kGfsk: return "GFSK";
    case Modulation::kCpfsk: return "CPFSK";
  }
  return "?";
}

Modulation parse_modulation(std::string_view name) {
  const std::string u = upper(name);
  if (u == "16QAM") return Modulation::k16qam;
  for (auto m : all_modulations())
    if (u == modulation_name(m)) return m;
  throw ConfigError("unknown modulation: " + std::string(name));
}

std::vector<Modulation> all_modulations() {
  return {Modulation::kBpsk, Modulation::kQpsk, Modulation::k8psk, Modulation::k16qam,
          Modulation::kPam4, Modulation::kGfsk, Modulation::kCpfsk};
}

std::vector<double> snr_grid(double min_db, double max_db, double step_db) {
  if (!(step_db > 0.0) || max_db < min_db) throw ConfigError("empty SNR grid");
  const auto count = static_cast<std::size_t>(std::floor((max_db - min_db) / step_db + 1e-9)) + 1;
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) grid[i] = min_db + static_cast<double>(i) * step_db;
  return grid;
}

std::vector<double> rrc_taps(std::size_t sps, double rolloff, std::size_t half_span) {
  const double beta = rolloff;
  const auto half = static_cast<std::ptrdiff_t>(half_span * sps);
  std::vector<double> h;
  h.reserve(static_cast<std::size_t>(2 * half + 1));
  const double pi = std::numbers::pi;
  for (std::ptrdiff_t k = -half; k <= half; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(sps);
    double v;
    if (k == 0) {
      v = 1.0 - beta + 4.0 * beta / pi;
    } else if (beta > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * beta)) < 1e-12) {
      v = beta / std::numbers::sqrt2 *
          ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * beta)) + (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * beta)));
    } else {
      v = (std::sin(pi * t * (1.0 - beta)) + 4.0 * beta * t * std::cos(pi * t * (1.0 + beta))) /
          (pi * t * (1.0 - (4.0 * beta * t) * (4.0 * beta * t)));
    }
    h.push_back(v);
  }
  double energy = 0.0;
  for (double v : h) energy += v * v;
  const double norm = 1.0 / std::sqrt(energy);
  for (auto& v : h) v *= norm;
  return h;
}

CleanFrame synthesize_clean(Modulation m, std::size_t length, std::size_t sps, double rolloff,
                            std::size_t half_span, std::mt19937_64& rng) {
  if (length == 0 || sps == 0) throw ConfigError("frame length and samples per symbol must be positive");
  CleanFrame f = (m == Modulation::kGfsk || m == Modulation::kCpfsk)
                     ? synth_fsk(m == Modulation::kGfsk, length, sps, rng)
                     : synth_linear(m, length, sps, rolloff, half_span, rng);
  double power = 0.0;
  for (std::size_t t = 0; t < length; ++t) power += f.i[t] * f.i[t] + f.q[t] * f.q[t];
  if (!(power > 0.0)) throw NumericError("synthesized frame has zero power");
  f.amplitude = std::sqrt(static_cast<double>(length) / power);
  for (std::size_t t = 0; t < length; ++t) {
    f.i[t] *= f.amplitude;
    f.q[t] *= f.amplitude;
  }
  return f;
}

double signal_power(const IqFrame& frame) {
  double total = 0.0;
  for (float v : frame.samples) total += static_cast<double>(v) * static_cast<double>(v);
  return total;
}

double signal_power(std::span<const double> samples) {
  double total = 0.0;
  for (double v : samples) total += v * v;
  return total;
}

IqFrame add_awgn(const IqFrame& frame, double snr_db, std::mt19937_64& rng) {
  const double power = signal_power(frame);
  if (!(power > 0.0)) throw NumericError("add_awgn: zero-power input frame");
  const std::size_t n = frame.length();
  const double noise_power = power / std::pow(10.0, snr_db / 10.0);
  const double sigma = std::sqrt(noise_power / static_cast<double>(2 * n));
  std::normal_distribution<double> normal(0.0, 1.0);
  IqFrame out = frame;
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    out.samples[k] = static_cast<float>(static_cast<double>(frame.samples[k]) + sigma * normal(rng));
  }
  return out;
}

double measure_snr_db(std::span<const double> clean, std::span<const double> noisy) {
  if (clean.size() != noisy.size()) throw ShapeError("measure_snr_db: length mismatch");
  double s = 0.0, e = 0.0;
  for (std::size_t k = 0; k < clean.size(); ++k) {
    s += clean[k] * clean[k];
    const double d = noisy[k] - clean[k];
    e += d * d;
  }
  return 10.0 * std::log10(s / e);
}

std::string GeneratorConfig::canonical_json() const {
  json grid = json::array();
  for (double v : snr_grid_db) grid.push_back(fmt_double(v));
  json j{{"classes", classes},
         {"snr_grid_db", grid},
         {"frames_per_cell", frames_per_cell},
         {"seed", seed},
         {"length", length},
         {"samples_per_symbol", samples_per_symbol},
         {"rolloff", fmt_double(rolloff)},
         {"filter_half_span", filter_half_span},
         {"normalize", normalize},
         {"exact_snr", exact_snr}};
  return j.dump();
}

namespace {

void check_generator(const GeneratorConfig& c, std::vector<Modulation>& mods) {
  if (c.classes.size() < 2) throw ConfigError("at least two modulation classes are required");
  if (c.snr_grid_db.empty()) throw ConfigError("empty SNR grid");
  if (c.frames_per_cell < 1) throw ConfigError("frames_per_cell must be >= 1");
  if (c.length == 0) throw ConfigError("frame length must be positive");
  for (const auto& name : c.classes) mods.push_back(parse_modulation(name));
}

GeneratedPair make_frame(const GeneratorConfig& c, Modulation m, std::uint16_t label, double snr_db,
                         std::mt19937_64& rng) {
  const std::size_t n = c.length;
  CleanFrame clean = synthesize_clean(m, n, c.samples_per_symbol, c.rolloff, c.filter_half_span, rng);
  std::vector<double> ref(2 * n);
  std::copy(clean.i.begin(), clean.i.end(), ref.begin());
  std::copy(clean.q.begin(), clean.q.end(), ref.begin() + static_cast<std::ptrdiff_t>(n));

  const double s_power = signal_power(ref);
  const double n_power = s_power / std::pow(10.0, snr_db / 10.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(2 * n);
  const double sigma = std::sqrt(n_power / static_cast<double>(2 * n));
  for (auto& v : noise) v = sigma * normal(rng);
  if (c.exact_snr) {
    const double realized = signal_power(noise);
    const double k = std::sqrt(n_power / realized);
    for (auto& v : noise) v *= k;
  }
  std::vector<double> noisy(2 * n);
  for (std::size_t k = 0; k < 2 * n; ++k) noisy[k] = ref[k] + noise[k];
  if (c.normalize) {
    const double k = std::sqrt(static_cast<double>(n) / signal_power(noisy));
    for (auto& v : noisy) v *= k;
    for (auto& v : ref) v *= k;
  }
  GeneratedPair out;
  out.clean = std::move(ref);
  out.noisy.samples.resize(2 * n);
  for (std::size_t k = 0; k < 2 * n; ++k) out.noisy.samples[k] = static_cast<float>(noisy[k]);
  out.noisy.snr_db = static_cast<float>(snr_db);
  out.noisy.label = label;
  return out;
}

}  // namespace

std::vector<GeneratedPair> generate_cell_with_reference(const GeneratorConfig& config, std::size_t class_index,
                                                        std::size_t snr_index) {
  std::vector<Modulation> mods;
  check_generator(config, mods);
  if (class_index >= mods.size() || snr_index >= config.snr_grid_db.size()) throw ConfigError("cell out of range");
  const std::size_t cell = class_index * config.snr_grid_db.size() + snr_index;
  std::mt19937_64 rng(derive_seed(config.seed, "dataset-cell", cell));
  std::vector<GeneratedPair> out;
  out.reserve(config.frames_per_cell);
  for (std::size_t f = 0; f < config.frames_per_cell; ++f) {
    out.push_back(make_frame(config, mods[class_index], static_cast<std::uint16_t>(class_index),
                             config.snr_grid_db[snr_index], rng));
  }
  return out;
}

Dataset generate_dataset(const GeneratorConfig& config) {
  std::vector<Modulation> mods;
  check_generator(config, mods);
  Dataset d;
  d.length = config.length;
  for (auto m : mods) d.class_names.emplace_back(modulation_name(m));
  d.frames.reserve(mods.size() * config.snr_grid_db.size() * config.frames_per_cell);
  for (std::size_t c = 0; c < mods.size(); ++c) {
    for (std::size_t s = 0; s < config.snr_grid_db.size(); ++s) {
      for (auto& pair : generate_cell_with_reference(config, c, s)) d.frames.push_back(std::move(pair.noisy));
    }
  }
  d.provenance.source = "generator";
  d.provenance.config_hash = sha256_hex(config.canonical_json());
  d.provenance.normalized = config.normalize;
  return d;
}

// ---------------------------------------------------------------------------

std::string Dataset::content_hash() const {
  ByteWriter w;
  w.u64(length);
  for (const auto& name : class_names) {
    w.raw(name);
    w.u16(0);
  }
  write_records(w, *this);
  return sha256_hex(w.bytes());
}

void Dataset::validate() const {
  if (length == 0) throw FormatError("frame length must be positive");
  if (class_names.empty()) throw FormatError("dataset has no classes");
  for (const auto& f : frames) {
    if (f.samples.size() != 2 * length) throw FormatError("frame has wrong sample count");
    if (f.label >= class_names.size()) throw FormatError("label out of range");
    for (float v : f.samples)
      if (!std::isfinite(v)) throw FormatError("non-finite sample");
    if (!std::isfinite(f.snr_db)) throw FormatError("non-finite SNR tag");
  }
}

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  d.validate();
  const std::string meta = json{{"class_names", d.class_names}, {"provenance", provenance_json(d.provenance)}}.dump();
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.class_names.size()));
  w.u32(static_cast<std::uint32_t>(d.length));
  w.u64(d.frames.size());
  w.u64(meta.size());
  write_records(w, d);
  w.raw(meta);
  return std::move(w.bytes());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  if (bytes.size() < kHeaderBytes) throw TruncatedError("dataset: file shorter than header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("dataset: bad magic");
  ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const std::uint32_t k = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint64_t meta_len = r.u64();
  if (k == 0 || n == 0) throw FormatError("dataset: header declares zero classes or zero length");
  const std::size_t rec = record_bytes(n);
  if (count > (bytes.size() - kHeaderBytes) / rec) throw TruncatedError("dataset: truncated frame payload");
  const std::size_t needed = kHeaderBytes + count * rec + meta_len;
  if (bytes.size() < needed) throw TruncatedError("dataset: truncated payload");

  Dataset d;
  d.length = n;
  d.frames.resize(count);
  for (auto& f : d.frames) {
    f.samples.resize(2 * n);
    for (auto& v : f.samples) v = r.f32();
    f.snr_db = r.f32();
    f.label = r.u16();
    if (f.label >= k) throw FormatError("dataset: label out of range");
  }
  const auto meta = r.raw(meta_len);
  json j;
  try {
    j = json::parse(meta.begin(), meta.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: bad metadata: ") + e.what());
  }
  d.class_names = j.value("class_names", std::vector<std::string>{});
  if (d.class_names.size() != k) throw FormatError("dataset: class count does not match header");
  if (j.contains("provenance")) d.provenance = provenance_from(j["provenance"]);
  d.validate();
  if (!consumed && needed != bytes.size()) throw FormatError("dataset: trailing bytes after metadata");
  if (consumed) *consumed = needed;
  return d;
}

void save_dataset(const Dataset& dataset, const std::string& path) { write_file(path, encode_dataset(dataset)); }

Dataset load_dataset(const std::string& path) {
  const auto bytes = read_file(path);
  std::size_t used = 0;
  Dataset d = decode_dataset(bytes, &used);
  if (used != bytes.size()) {
    const bool delta = bytes.size() - used >= 4 && std::equal(bytes.begin() + static_cast<std::ptrdiff_t>(used),
                                                              bytes.begin() + static_cast<std::ptrdiff_t>(used) + 4,
                                                              "DLTA");
    if (!delta) throw FormatError("dataset: trailing bytes after metadata");
  }
  return d;
}

// ---------------------------------------------------------------------------

std::string split_id(const Dataset& dataset, const SplitSpec& spec) {
  return sha256_hex(dataset.content_hash() + "|" + fmt_double(spec.train_fraction) + "|" +
                    std::to_string(spec.seed) + "|" + (spec.stratify ? "1" : "0"));
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.length = dataset.length;
  out.class_names = dataset.class_names;
  out.provenance = dataset.provenance;
  out.frames.reserve(indices.size());
  for (auto i : indices) out.frames.push_back(dataset.frames.at(i));
  return out;
}

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("split: train fraction must lie in (0, 1)");
  }
  if (dataset.frames.empty()) throw ConfigError("split: empty dataset");
  std::map<std::pair<int, float>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    const auto& f = dataset.frames[i];
    const auto key = spec.stratify ? std::make_pair(static_cast<int>(f.label), f.snr_db) : std::make_pair(0, 0.0f);
    cells[key].push_back(i);
  }
  std::mt19937_64 rng(derive_seed(spec.seed, "split"));
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [key, idx] : cells) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train =
        static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(idx.size()) + 1e-9));
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  SplitResult r{subset(dataset, train_idx), subset(dataset, test_idx)};
  const std::string parent = dataset.content_hash();
  const std::string id = split_id(dataset, spec);
  for (auto* half : {&r.train, &r.test}) {
    half->provenance.source = "split";
    half->provenance.parent_hash = parent;
    half->provenance.split_id = id;
  }
  r.train.provenance.role = "train";
  r.test.provenance.role = "test";
  return r;
}

Dataset filter_snr(const Dataset& dataset, double snr_db) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dataset.frames.size(); ++i)
    if (std::abs(static_cast<double>(dataset.frames[i].snr_db) - snr_db) < 1e-6) idx.push_back(i);
  return subset(dataset, idx);
}

std::vector<std::size_t> stratified_sample(const Dataset& dataset, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes());
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) by_class.at(dataset.frames[i].label).push_back(i);
  std::mt19937_64 rng(derive_seed(seed, "stratified-sample"));
  std::vector<std::size_t> out;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t take = std::min(per_class, idx.size());
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace amc
