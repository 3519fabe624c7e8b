#pragma once

// White-box evasion attacks on a frame classifier (FGM, FGSM, PGD, DeepFool,
// PCA-based universal perturbation) and the PNR/PSR budget algebra.

#include <optional>
#include <string>
#include <vector>

#include "amc/model.hpp"

namespace amc {

enum class AttackKind { kFgm, kFgsm, kPgd, kDeepFool, kUap };

std::string_view attack_name(AttackKind kind);
/// "fgm", "fgsm", "pgd", "deepfool", "uap" (case-insensitive).
AttackKind parse_attack(std::string_view name);

/// Budgets in linear form: PNR = eps^2 (SNR + 1) / ||x||^2, PSR = PNR / SNR.
/// SNR enters linearly; the dB helpers convert.
double db_to_linear(double db);
double linear_to_db(double linear);
/// eps = sqrt(PNR * ||x||^2 / (SNR + 1)). Throws ConfigError on nonpositive power.
double pnr_to_epsilon(double pnr_db, double snr_db, double signal_power);
double epsilon_to_pnr_db(double epsilon, double snr_db, double signal_power);
double psr_db(double pnr_db, double snr_db);
double pnr_db_from_psr(double psr_db, double snr_db);
/// L-infinity budget whose full-sign perturbation has L2 norm eps2 over `dims` entries.
double linf_from_l2(double eps2, std::size_t dims);

struct Budget {
  double pnr_db = 0.0;
  double psr_db = 0.0;
  double epsilon = 0.0;
  double snr_db = 0.0;
  double signal_power = 0.0;

  static Budget from_pnr(double pnr_db, double snr_db, double signal_power);
  static Budget from_epsilon(double epsilon, double snr_db, double signal_power);
};

struct AttackConfig {
  AttackKind kind = AttackKind::kFgsm;
  /// Fixed per-frame budget in the kind's own norm; used when pnr_db is unset.
  double epsilon = 0.0;
  /// Per-frame budget from PNR at each frame's SNR tag and power (L2 radius;
  /// converted to L-infinity for FGSM and PGD).
  std::optional<double> pnr_db;
  /// PGD step as a fraction of epsilon.
  double beta_frac = 0.25;
  int pgd_iters = 10;
  double overshoot = 0.02;
  int deepfool_iters = 50;
  /// L2 cap on DeepFool's perturbation when no PNR is set; 0 disables it.
  /// With a PNR, the cap is the PNR-derived radius.
  double deepfool_clip = 0.0;
  std::size_t uap_probe = 256;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
};

/// Perturbed frames paired with their originals.
struct AdversarialBatch {
  NdArray original;   // [N, 1, 2, n]
  NdArray perturbed;  // original + delta
  NdArray delta;
  std::vector<int> labels;
  std::vector<double> snr_db;
  std::vector<int> predicted;  // model label on the perturbed frame
  /// predicted != label.
  std::vector<std::uint8_t> success;
  /// Frames whose gradient went non-finite; their delta is the last finite iterate.
  std::vector<std::uint8_t> aborted;
  std::string provenance;  // JSON

  std::size_t size() const { return labels.size(); }
  double accuracy() const;
};

/// Per-frame gradient of the cross-entropy against the true label, [N, 1, 2, n].
/// Throws NumericError when any entry is non-finite.
NdArray input_gradient(const Model& model, const NdArray& x, std::span<const int> labels);

/// delta = eps * g / ||g||_2 per frame; zero-gradient frames get delta = 0.
AdversarialBatch attack_fgm(const Model& model, const Batch& batch, std::span<const double> eps);
/// delta = eps * sign(g), sign(0) = 0.
AdversarialBatch attack_fgsm(const Model& model, const Batch& batch, std::span<const double> eps);
/// delta <- clip(delta + beta * sign(g(x + delta)), -eps, eps), repeated `iters` times.
AdversarialBatch attack_pgd(const Model& model, const Batch& batch, std::span<const double> eps,
                            std::span<const double> beta, int iters);
/// Multiclass closest-hyperplane iteration until the label flips. `l2_clip`,
/// when non-empty, caps each frame's final perturbation norm.
AdversarialBatch attack_deepfool(const Model& model, const Batch& batch, int max_iters, double overshoot,
                                 std::span<const double> l2_clip = {});

/// Top principal direction of the row-normalized gradient matrix, scaled to
/// ||delta||_2 = eps, sign chosen to raise the mean probe loss. Shape [2, n].
/// Shrinks each frame's delta onto its L2 radius (when larger) and re-predicts.
AdversarialBatch clip_l2(const Model& model, const AdversarialBatch& adv, std::span<const double> l2_clip);
NdArray fit_uap_pca(const Model& model, const Batch& probe, double eps);
/// Adds the same delta to every frame.
AdversarialBatch apply_uap(const Model& model, const Batch& batch, const NdArray& delta);

/// Per-frame L2 budgets for a config: fixed epsilon or PNR-derived.
std::vector<double> frame_budgets(const AttackConfig& config, const Batch& batch);

/// Runs the configured attack. UAP fits on `uap_probe` (required for UAP) and
/// uses the smallest per-frame radius, so every frame stays within budget.
AdversarialBatch run_attack(const Model& model, const Batch& batch, const AttackConfig& config,
                            const Batch* uap_probe = nullptr);

/// Adversarial batch file: dataset format (perturbed frames) followed by a
/// "DLTA" section with delta values and per-frame flags.
struct AdversarialFile {
  Dataset perturbed;
  std::vector<float> delta;
  std::vector<std::uint8_t> success;
  std::vector<std::uint8_t> aborted;
  std::string provenance;
};

void save_adversarial_batch(const AdversarialBatch& adv, const std::vector<std::string>& class_names,
                            const std::string& path);
AdversarialFile load_adversarial_batch(const std::string& path);

}  // namespace amc
