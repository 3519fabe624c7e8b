#pragma once

// Net-Trim pruning of one fully-connected layer: minimize ||W||_1 subject to
// the layer's post-ReLU outputs on a probe set staying within an eta-ball of
// the original outputs, solved by ADMM.

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "amc/model.hpp"

namespace amc {

/// Entries with |w| at or below this are zero.
inline constexpr double kZeroThreshold = 1e-8;

struct AdmmConfig {
  double rho = 1.0;
  int max_iters = 500;
  double abs_tol = 1e-4;
  double rel_tol = 1e-4;
  /// Residual balancing: rescale rho when primal and dual residuals drift apart.
  bool adaptive_rho = true;
};

struct PruneConfig {
  std::string layer = "fc1";
  double eta = 0.8;
  /// Interpret eta as a fraction of ||Y||_F on the probe instead of an absolute bound.
  bool eta_relative = false;
  std::size_t probe_size = 512;
  /// Scale each probe input column to unit norm before recomputing outputs.
  bool normalize_probe = true;
  AdmmConfig admm;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Probe activations around one dense layer, one column per probe frame.
struct LayerActivations {
  Eigen::MatrixXd input;   // d x P, what enters the layer
  Eigen::MatrixXd output;  // m x P, post-ReLU outputs
  /// Per-column multiplier on the bias; empty means all ones.
  Eigen::VectorXd bias_scale;
};

struct SparseLayerResult {
  Eigen::MatrixXd weights;  // d x m
  double sparsity = 0.0;
  /// ||max(W^T X + b, 0) - Y||_F on the probe.
  double residual = 0.0;
  double eta = 0.0;
  double l1 = 0.0;
  int iterations = 0;
  bool converged = false;
  /// True when the solve would have increased ||W||_1 and the original was kept.
  bool kept_original = false;
};

/// Runs the probe frames through the model and records the named dense layer's
/// input and post-ReLU output. Throws ConfigError if the layer is not a dense
/// layer followed by ReLU.
LayerActivations collect_layer_activations(const Model& model, const Dataset& probe, const std::string& layer);

/// Divides each probe column (input, output and bias multiplier) by its input
/// norm. ReLU is positively homogeneous, so the per-column constraint set is
/// unchanged; only the weighting inside the Frobenius norm moves.
LayerActivations normalize_probe(const LayerActivations& acts);

/// Solves min ||V||_1 s.t. dist(V^T X, A) <= eta, where A pins V^T X + b to Y on
/// the support of Y and keeps it nonpositive off the support. `original`, when
/// given, warm-starts the solve and caps the returned L1 norm.
/// Throws InfeasibleError when eta is below the numerical floor.
SparseLayerResult trim(const LayerActivations& acts, const Eigen::VectorXd& bias, double eta,
                       const AdmmConfig& config, const Eigen::MatrixXd* original = nullptr);
SparseLayerResult trim(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& bias, double eta,
                       const AdmmConfig& config, const Eigen::MatrixXd* original = nullptr);

/// ||max(W^T X + b s^T, 0) - Y||_F, with s the per-column bias multiplier.
double fidelity_residual(const Eigen::MatrixXd& w, const Eigen::VectorXd& bias, const LayerActivations& acts);
double fidelity_residual(const Eigen::MatrixXd& w, const Eigen::VectorXd& bias, const Eigen::MatrixXd& x,
                         const Eigen::MatrixXd& y);

/// Zeroes entries with |w| <= kZeroThreshold.
void hard_threshold(Eigen::MatrixXd& w);
double sparsity(std::span<const double> w);
double sparsity(const Eigen::MatrixXd& w);

/// Installs Ŵ into the named layer, pins its zero pattern, and tags provenance.
void apply_pruning(Model& model, const std::string& layer, const Eigen::MatrixXd& weights,
                   const std::string& report_json = "");

/// Draws a class-stratified probe from `train`, trims the layer and applies the result.
SparseLayerResult prune_model(Model& model, const Dataset& train, const PruneConfig& config);

/// JSON sparsity report: eta, sparsity, residual, iterations, converged, ...
std::string prune_report_json(const SparseLayerResult& result, const PruneConfig& config);

}  // namespace amc
