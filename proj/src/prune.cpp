#include "amc/prune.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "amc/error.hpp"
#include "amc/util.hpp"

namespace amc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const DenseLayer& find_dense(const Model& model, const std::string& layer) {
  for (const auto& l : model.arch().layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l); d && d->name == layer) return *d;
  }
  throw ConfigError("layer " + layer + " is not a dense layer of this model");
}

MatrixXd layer_weights(const ParamGroup& g) {
  return Eigen::Map<const RowMajor>(g.weight.ptr(), g.weight.dim(0), g.weight.dim(1));
}

VectorXd layer_bias(const ParamGroup& g) { return Eigen::Map<const VectorXd>(g.bias.ptr(), g.bias.size()); }

// Solves (I + X X^T) V = R for V, through the smaller of the two Gram systems.
class GramSolver {
 public:
  explicit GramSolver(const MatrixXd& x) : x_(x), woodbury_(x.cols() < x.rows()) {
    if (woodbury_) {
      MatrixXd k = MatrixXd::Identity(x.cols(), x.cols());
      k.noalias() += x.transpose() * x;
      llt_.compute(k);
    } else {
      MatrixXd k = MatrixXd::Identity(x.rows(), x.rows());
      k.noalias() += x * x.transpose();
      llt_.compute(k);
    }
    if (llt_.info() != Eigen::Success) throw NumericError("probe Gram matrix factorization failed");
  }

  MatrixXd solve(const MatrixXd& r) const {
    if (!woodbury_) return llt_.solve(r);
    MatrixXd t = x_.transpose() * r;
    MatrixXd v = r;
    v.noalias() -= x_ * llt_.solve(t);
    return v;
  }

 private:
  const MatrixXd& x_;
  bool woodbury_;
  Eigen::LLT<MatrixXd> llt_;
};

// Projection onto A = {Z : Z = T on the support, Z <= -b off it}, widened by eta.
class FidelitySet {
 public:
  FidelitySet(const MatrixXd& y, const MatrixXd& offset, double eta)
      : eta_(eta), support_(y.array() > 0.0), target_(y - offset), ceiling_(-offset) {}

  MatrixXd project(const MatrixXd& w) const {
    MatrixXd a = support_.select(target_, w.cwiseMin(ceiling_));
    const double dist = (w - a).norm();
    if (dist <= eta_) return w;
    return a + (eta_ / dist) * (w - a);
  }

 private:
  double eta_;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> support_;
  MatrixXd target_;
  MatrixXd ceiling_;
};

MatrixXd soft_threshold(const MatrixXd& w, double t) {
  return w.unaryExpr([t](double v) { return v > t ? v - t : (v < -t ? v + t : 0.0); });
}

}  // namespace

void PruneConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  if (probe_size < 1) throw ConfigError("probe size must be at least 1");
  if (!(admm.rho > 0.0)) throw ConfigError("ADMM rho must be positive");
  if (admm.max_iters < 1) throw ConfigError("ADMM needs at least one iteration");
}

LayerActivations collect_layer_activations(const Model& model, const Dataset& probe, const std::string& layer) {
  if (!find_dense(model, layer).relu) throw ConfigError("layer " + layer + " is not followed by ReLU");
  if (probe.frames.empty()) throw ConfigError("empty probe set");
  const auto& g = model.group(layer);
  LayerActivations acts;
  acts.input.resize(static_cast<Eigen::Index>(g.weight.dim(0)), static_cast<Eigen::Index>(probe.size()));
  acts.output.resize(static_cast<Eigen::Index>(g.weight.dim(1)), static_cast<Eigen::Index>(probe.size()));
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < probe.size(); s += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, probe.size() - s));
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = s + k;
    const Batch b = make_batch(probe, idx);
    Tape tape;
    const auto fr = model.forward(tape, tape.constant(b.x), {});
    const auto& tap = fr.taps.at(layer);
    const NdArray& in = tape.value(tap.input);
    const NdArray& out = tape.value(tap.output);
    const auto n = static_cast<Eigen::Index>(idx.size());
    acts.input.middleCols(static_cast<Eigen::Index>(s), n) =
        Eigen::Map<const RowMajor>(in.ptr(), n, acts.input.rows()).transpose();
    acts.output.middleCols(static_cast<Eigen::Index>(s), n) =
        Eigen::Map<const RowMajor>(out.ptr(), n, acts.output.rows()).transpose();
  }
  return acts;
}

LayerActivations normalize_probe(const LayerActivations& acts) {
  LayerActivations out = acts;
  if (out.bias_scale.size() == 0) out.bias_scale = VectorXd::Ones(acts.input.cols());
  for (Eigen::Index j = 0; j < out.input.cols(); ++j) {
    const double n = out.input.col(j).norm();
    if (n == 0.0) continue;
    out.input.col(j) /= n;
    out.output.col(j) /= n;
    out.bias_scale(j) /= n;
  }
  return out;
}

namespace {

MatrixXd bias_offset(const VectorXd& bias, const LayerActivations& acts) {
  if (acts.bias_scale.size() == 0) return bias.replicate(1, acts.input.cols());
  if (acts.bias_scale.size() != acts.input.cols()) throw ShapeError("bias scale length does not match probe size");
  return bias * acts.bias_scale.transpose();
}

}  // namespace

double fidelity_residual(const MatrixXd& w, const VectorXd& bias, const LayerActivations& acts) {
  return ((w.transpose() * acts.input + bias_offset(bias, acts)).cwiseMax(0.0) - acts.output).norm();
}

double fidelity_residual(const MatrixXd& w, const VectorXd& bias, const MatrixXd& x, const MatrixXd& y) {
  return fidelity_residual(w, bias, LayerActivations{x, y, {}});
}

void hard_threshold(MatrixXd& w) {
  w = w.unaryExpr([](double v) { return std::abs(v) <= kZeroThreshold ? 0.0 : v; });
}

double sparsity(std::span<const double> w) {
  if (w.empty()) return 0.0;
  const auto zeros = std::count_if(w.begin(), w.end(), [](double v) { return std::abs(v) <= kZeroThreshold; });
  return static_cast<double>(zeros) / static_cast<double>(w.size());
}

double sparsity(const MatrixXd& w) { return sparsity(std::span<const double>(w.data(), static_cast<std::size_t>(w.size()))); }

SparseLayerResult trim(const MatrixXd& x, const MatrixXd& y, const VectorXd& bias, double eta,
                       const AdmmConfig& config, const MatrixXd* original) {
  return trim(LayerActivations{x, y, {}}, bias, eta, config, original);
}

SparseLayerResult trim(const LayerActivations& acts, const VectorXd& bias, double eta, const AdmmConfig& config,
                       const MatrixXd* original) {
  const MatrixXd& x = acts.input;
  const MatrixXd& y = acts.output;
  const Eigen::Index d = x.rows(), p = x.cols(), m = y.rows();
  if (y.cols() != p) throw ShapeError("probe input and output column counts differ");
  if (bias.size() != m) throw ShapeError("bias length does not match layer width");
  if (original && (original->rows() != d || original->cols() != m)) throw ShapeError("original weights shape mismatch");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("non-finite probe activations");
  const double floor = 1e-9 * std::max(1.0, y.norm());
  if (eta <= floor) {
    throw InfeasibleError("eta " + std::to_string(eta) + " is below the solver's numerical floor " +
                          std::to_string(floor));
  }

  const MatrixXd offset = bias_offset(bias, acts);
  const GramSolver gram(x);
  const FidelitySet fidelity(y, offset, eta);

  MatrixXd v = original ? *original : MatrixXd::Zero(d, m);
  MatrixXd u = v;
  MatrixXd z = fidelity.project(v.transpose() * x);
  MatrixXd l1 = MatrixXd::Zero(d, m);
  MatrixXd l2 = MatrixXd::Zero(m, p);
  double rho = config.rho;
  const double sqrt_pri = std::sqrt(static_cast<double>(d * m + m * p));
  const double sqrt_dual = std::sqrt(static_cast<double>(d * m));

  SparseLayerResult res;
  res.eta = eta;
  for (int it = 1; it <= config.max_iters; ++it) {
    MatrixXd rhs = u - l1;
    rhs.noalias() += x * (z - l2).transpose();
    v = gram.solve(rhs);
    const MatrixXd vx = v.transpose() * x;

    const MatrixXd u_old = u;
    const MatrixXd z_old = z;
    u = soft_threshold(v + l1, 1.0 / rho);
    z = fidelity.project(vx + l2);
    l1 += v - u;
    l2 += vx - z;
    res.iterations = it;

    const double r_pri = std::sqrt((v - u).squaredNorm() + (vx - z).squaredNorm());
    MatrixXd dual = u - u_old;
    dual.noalias() += x * (z - z_old).transpose();
    const double s_dual = rho * dual.norm();
    const double eps_pri = sqrt_pri * config.abs_tol +
                           config.rel_tol * std::max(std::sqrt(v.squaredNorm() + vx.squaredNorm()),
                                                     std::sqrt(u.squaredNorm() + z.squaredNorm()));
    MatrixXd scaled_dual = l1;
    scaled_dual.noalias() += x * l2.transpose();
    const double eps_dual = sqrt_dual * config.abs_tol + config.rel_tol * rho * scaled_dual.norm();

    if (r_pri <= eps_pri && s_dual <= eps_dual) {
      MatrixXd w = u;
      hard_threshold(w);
      if (fidelity_residual(w, bias, acts) <= 1.05 * eta) {
        res.converged = true;
        break;
      }
    }
    if (config.adaptive_rho) {
      if (r_pri > 10.0 * s_dual) {
        rho *= 2.0;
        l1 /= 2.0;
        l2 /= 2.0;
      } else if (s_dual > 10.0 * r_pri) {
        rho /= 2.0;
        l1 *= 2.0;
        l2 *= 2.0;
      }
    }
  }

  res.weights = u;
  hard_threshold(res.weights);
  res.l1 = res.weights.lpNorm<1>();
  if (original && res.l1 > original->lpNorm<1>()) {
    res.weights = *original;
    hard_threshold(res.weights);
    res.l1 = res.weights.lpNorm<1>();
    res.kept_original = true;
  }
  res.sparsity = sparsity(res.weights);
  res.residual = fidelity_residual(res.weights, bias, acts);
  return res;
}

void apply_pruning(Model& model, const std::string& layer, const MatrixXd& weights, const std::string& report_json) {
  find_dense(model, layer);
  ParamGroup& g = model.group(layer);
  if (static_cast<std::size_t>(weights.rows()) != g.weight.dim(0) ||
      static_cast<std::size_t>(weights.cols()) != g.weight.dim(1)) {
    throw ShapeError("pruned weights are " + std::to_string(weights.rows()) + "x" + std::to_string(weights.cols()) +
                     ", layer " + layer + " is " + shape_str(g.weight.shape()));
  }
  if (!weights.allFinite()) throw NumericError("pruned weights are not finite");
  const std::size_t cols = g.weight.dim(1);
  g.mask.assign(g.weight.size(), 1);
  for (std::size_t i = 0; i < g.weight.dim(0); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double w = weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (std::abs(w) <= kZeroThreshold) w = 0.0;
      const double stored = static_cast<double>(static_cast<float>(w));
      g.weight[i * cols + j] = stored;
      g.mask[i * cols + j] = stored != 0.0;
    }
  }
  auto& meta = model.meta();
  meta.provenance = meta.provenance == "distilled" ? "distill-pruned" : meta.provenance + "-pruned";
  if (!report_json.empty()) {
    meta.prune_json = report_json;
  } else {
    meta.prune_json = nlohmann::json{{"layer", layer}, {"sparsity", sparsity(g.weight.data())}}.dump();
  }
}

std::string prune_report_json(const SparseLayerResult& r, const PruneConfig& c) {
  return nlohmann::json{{"layer", c.layer},
                        {"eta", c.eta},
                        {"eta_relative", c.eta_relative},
                        {"eta_absolute", r.eta},
                        {"sparsity", r.sparsity},
                        {"residual", r.residual},
                        {"l1", r.l1},
                        {"iterations", r.iterations},
                        {"converged", r.converged},
                        {"kept_original", r.kept_original},
                        {"probe_size", c.probe_size},
                        {"normalize_probe", c.normalize_probe},
                        {"rho", c.admm.rho},
                        {"max_iters", c.admm.max_iters},
                        {"abs_tol", c.admm.abs_tol},
                        {"rel_tol", c.admm.rel_tol},
                        {"adaptive_rho", c.admm.adaptive_rho},
                        {"seed", c.seed}}
      .dump();
}

SparseLayerResult prune_model(Model& model, const Dataset& train, const PruneConfig& config) {
  config.validate();
  if (train.num_classes() != model.num_classes()) throw ConfigError("probe classes do not match the model head");
  const std::size_t per_class = std::max<std::size_t>(1, config.probe_size / train.num_classes());
  const auto idx = stratified_sample(train, per_class, derive_seed(config.seed, "prune-probe"));
  const Dataset probe = subset(train, idx);
  const ParamGroup& g = model.group(config.layer);
  const MatrixXd w = layer_weights(g);
  const VectorXd b = layer_bias(g);
  LayerActivations acts = collect_layer_activations(model, probe, config.layer);
  if (config.normalize_probe) acts = normalize_probe(acts);
  const double eta = config.eta_relative ? config.eta * acts.output.norm() : config.eta;
  SparseLayerResult res = trim(acts, b, eta, config.admm, &w);
  apply_pruning(model, config.layer, res.weights, prune_report_json(res, config));
  return res;
}

}  // namespace amc
