#pragma once

// Robustness evaluation: attack sweeps over PNR, clean-accuracy comparison,
// report export, and the end-to-end pipeline driver.

#include <optional>
#include <string>
#include <vector>

#include "amc/advtrain.hpp"
#include "amc/attack.hpp"
#include "amc/model.hpp"

namespace amc {

inline constexpr int kReportFormatVersion = 1;

struct CurvePoint {
  double pnr_db = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

struct AttackCurve {
  std::string model;
  std::string attack;
  double snr_db = 0.0;
  std::string attack_json;  // attack template without the PNR
  std::vector<CurvePoint> points;
  /// Accuracy never rises by more than the slack as PNR grows.
  bool monotone = true;
};

struct ModelSummary {
  std::string tag;
  std::string provenance;
  double clean_accuracy = 0.0;
  std::size_t n = 0;
  std::size_t params = 0;
  std::size_t nonzero_params = 0;
};

/// Clean accuracy before and after adversarial training for one model family.
struct AtPair {
  std::string base;
  std::string adv;
  double clean_drop = 0.0;
};

struct Artifact {
  std::string name;  // relative to the output directory
  std::string kind;  // "dataset" or "checkpoint"
  std::string sha256;
};

struct EvalReport {
  int format_version = kReportFormatVersion;
  std::string config_json = "{}";
  std::vector<ModelSummary> models;
  std::vector<AttackCurve> curves;
  std::vector<AtPair> at_pairs;
  std::vector<Artifact> artifacts;

  const ModelSummary& model(const std::string& tag) const;
  const AttackCurve& curve(const std::string& model, const std::string& attack) const;
};

struct EvalConfig {
  std::vector<double> pnr_db = snr_grid(-20.0, 0.0, 2.0);
  /// Evaluate only frames tagged with this SNR.
  std::optional<double> snr_db = 10.0;
  /// Attack templates; their budgets come from the PNR sweep.
  std::vector<AttackConfig> attacks;
  std::size_t uap_probe = 256;
  double monotone_slack = 0.03;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

/// Throws ContaminationError when `test` is the model's training set or the
/// training half of the split the model was trained on.
void check_separation(const Model& model, const Dataset& test);

/// Accuracy of `model` under `attack` at each PNR, on frames matching the SNR filter.
AttackCurve evaluate_under_attack(const Model& model, const Dataset& test, const AttackConfig& attack,
                                  std::span<const double> pnr_list, std::optional<double> snr_filter,
                                  std::uint64_t seed = 0, std::size_t uap_probe = 256);

struct TaggedModel {
  std::string tag;
  const Model* model = nullptr;
};

/// Clean accuracy of every model plus every attack curve. Models tagged
/// "<x>-adv" next to "<x>" produce an AtPair.
EvalReport compare_report(std::span<const TaggedModel> models, const Dataset& test, const EvalConfig& config);

/// Canonical JSON (sorted keys, two-space indent).
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
/// Header `model,attack,pnr_db,snr_db,accuracy,n,seed`, one row per curve point.
std::string report_to_csv(const EvalReport& report);
void export_report(const EvalReport& report, const std::string& format, const std::string& path);

/// Runs the requested stages from a JSON config, writing artifacts under
/// `out_dir`, and returns the report (also written as report.json).
/// `seed` overrides the config's root seed when given.
EvalReport run_pipeline(const std::string& config_json, const std::string& out_dir,
                        std::optional<std::uint64_t> seed = std::nullopt);

/// Adversarial-training settings (seed included) that `run_pipeline` would use.
AdvTrainConfig pipeline_advtrain_config(const std::string& config_json,
                                        std::optional<std::uint64_t> seed = std::nullopt);

/// Parse helpers shared by the pipeline and the CLI.
AttackConfig attack_from_json(const std::string& text);

}  // namespace amc
