#pragma once

// Synthetic I/Q modulation datasets: pulse-shaped modulators, AWGN at a
// tagged SNR, a neutral binary file format, and stratified splitting.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace amc {

enum class Modulation { kBpsk, kQpsk, k8psk, k16qam, kPam4, kGfsk, kCpfsk };

std::string_view modulation_name(Modulation m);
/// Accepts the canonical names (BPSK, QPSK, 8PSK, QAM16, PAM4, GFSK, CPFSK),
/// case-insensitive, plus "16QAM". Throws ConfigError otherwise.
Modulation parse_modulation(std::string_view name);
std::vector<Modulation> all_modulations();

/// One complex baseband frame stored as two rows: samples[0..n) is I,
/// samples[n..2n) is Q.
struct IqFrame {
  std::vector<float> samples;
  float snr_db = 0.0f;
  std::uint16_t label = 0;

  std::size_t length() const { return samples.size() / 2; }
  float i(std::size_t t) const { return samples[t]; }
  float q(std::size_t t) const { return samples[length() + t]; }
  friend bool operator==(const IqFrame&, const IqFrame&) = default;
};

/// Where a dataset came from and, for split halves, which split produced it.
struct Provenance {
  std::string source;       // "generator", "import", "split", "adversarial"
  std::string config_hash;  // generator config or import source digest
  std::string parent_hash;  // content hash of the dataset that was split
  std::string split_id;
  std::string role;         // "", "train" or "test"
  bool normalized = true;   // per-frame unit-power normalization applied
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Dataset {
  std::size_t length = 128;
  std::vector<std::string> class_names;
  std::vector<IqFrame> frames;
  Provenance provenance;

  std::size_t size() const { return frames.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  /// SHA-256 over class names, frame samples, SNR tags and labels.
  std::string content_hash() const;
  /// Throws FormatError if any frame violates the dataset invariants.
  void validate() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GeneratorConfig {
  std::vector<std::string> classes;
  std::vector<double> snr_grid_db;
  std::size_t frames_per_cell = 100;
  std::uint64_t seed = 0;
  std::size_t length = 128;
  std::size_t samples_per_symbol = 8;
  double rolloff = 0.35;
  /// Root-raised-cosine span on each side of the peak, in symbols.
  std::size_t filter_half_span = 8;
  /// Rescale each noisy frame to unit average power per complex sample.
  bool normalize = true;
  /// Scale each noise realization so the frame's SNR equals its tag.
  bool exact_snr = true;

  /// Canonical JSON text of the config (for provenance hashing).
  std::string canonical_json() const;
};

/// Inclusive grid min, min+step, ..., max.
std::vector<double> snr_grid(double min_db, double max_db, double step_db);

/// Noiseless modulated baseband with unit average power per complex sample.
struct CleanFrame {
  std::vector<double> i;
  std::vector<double> q;
  /// Integer sample offset of the first symbol peak inside the frame.
  std::size_t timing_offset = 0;
  /// Symbols whose pulse peaks land at timing_offset + k * sps.
  std::vector<double> symbol_i;
  std::vector<double> symbol_q;
  /// Amplitude applied to the unit-energy pulse train to reach unit power.
  double amplitude = 1.0;
};

/// Unit-energy root-raised-cosine taps, 2 * half_span * sps + 1 long.
std::vector<double> rrc_taps(std::size_t sps, double rolloff, std::size_t half_span);

CleanFrame synthesize_clean(Modulation m, std::size_t length, std::size_t sps, double rolloff,
                            std::size_t half_span, std::mt19937_64& rng);

/// Sum of squares of all I and Q samples.
double signal_power(const IqFrame& frame);
double signal_power(std::span<const double> samples);

/// Adds complex white Gaussian noise with total power signal_power / 10^(snr/10)
/// in expectation, split evenly between I and Q. Throws on zero-power input.
IqFrame add_awgn(const IqFrame& frame, double snr_db, std::mt19937_64& rng);

/// 10 log10(||clean||^2 / ||noisy - clean||^2).
double measure_snr_db(std::span<const double> clean, std::span<const double> noisy);

/// classes x SNR points x frames_per_cell frames, ordered by class then SNR.
/// Each (class, SNR) cell draws from its own derived RNG stream.
Dataset generate_dataset(const GeneratorConfig& config);

/// Clean reference plus the noisy frame for one generated cell entry; used to
/// validate SNR tags against the known noiseless signal.
struct GeneratedPair {
  std::vector<double> clean;  // 2n, same scale as noisy
  IqFrame noisy;
};
std::vector<GeneratedPair> generate_cell_with_reference(const GeneratorConfig& config, std::size_t class_index,
                                                        std::size_t snr_index);

// Binary format: 32-byte header ("IQDS", u32 version, u32 K, u32 n,
// u64 frame count, u64 metadata length), frame records (2n f32 samples,
// f32 snr_db, u16 label), then a JSON metadata block.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
/// Without `consumed`, bytes past the metadata block are a FormatError.
Dataset decode_dataset(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

struct SplitSpec {
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
  bool stratify = true;
};

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Per (class, SNR) cell: floor(fraction * size) frames go to train, the
/// remainder to test. Both halves keep the original frame order.
SplitResult split(const Dataset& dataset, const SplitSpec& spec);
std::string split_id(const Dataset& dataset, const SplitSpec& spec);

/// Subset with frames at the given indices (in the given order).
Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);
/// Frames whose SNR tag equals snr_db (within 1e-6).
Dataset filter_snr(const Dataset& dataset, double snr_db);
/// Up to per_class frames from each class, drawn without replacement.
std::vector<std::size_t> stratified_sample(const Dataset& dataset, std::size_t per_class, std::uint64_t seed);

}  // namespace amc
