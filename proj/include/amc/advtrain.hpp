#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amc/model.hpp"

namespace amc {

struct AdvTrainConfig {
  /// Per-frame L2 radius from this PNR at the reference SNR and the frame's
  /// power; FGSM and PGD use the matching L-infinity radius.
  double pnr_db = -10.0;
  double ref_snr_db = 10.0;
  /// Fixed L2 radius overriding the PNR rule.
  std::optional<double> epsilon;
  double beta_frac = 0.25;
  int pgd_iters = 10;
  /// Shares of each batch replaced by PGD and FGSM versions; the rest stays clean.
  double pgd_fraction = 0.25;
  double fgsm_fraction = 0.25;
  std::vector<std::string> freeze{"fc1"};
  /// Attack the starting model once instead of the current one every batch.
  bool precompute = false;
  TrainConfig train;

  void validate() const;
  std::string to_json() const;
};

struct BatchMix {
  std::size_t pgd = 0;
  std::size_t fgsm = 0;
  std::size_t clean = 0;
};

/// floor(B * pgd_fraction) PGD, floor(B * fgsm_fraction) FGSM, remainder clean.
BatchMix batch_mix(std::size_t batch_size, const AdvTrainConfig& config);

/// Cross-entropy training on batches mixed with adversarial versions of their
/// frames. Frozen groups are never written; provenance gains an "-adv" suffix.
TrainHistory adversarial_train(Model& model, const Dataset& train, const AdvTrainConfig& config);

}  // namespace amc
