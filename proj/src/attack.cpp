#include "amc/attack.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "amc/error.hpp"
#include "amc/util.hpp"

namespace amc {

namespace {

constexpr std::size_t kChunk = 256;
constexpr char kDeltaMagic[4] = {'D', 'L', 'T', 'A'};

std::size_t frame_dims(const NdArray& x) { return x.size() / std::max<std::size_t>(x.dim(0), 1); }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

NdArray rows(const NdArray& x, std::size_t begin, std::size_t end) {
  const std::size_t per = frame_dims(x);
  Shape shape = x.shape();
  shape[0] = end - begin;
  return NdArray(shape, std::vector<double>(x.ptr() + begin * per, x.ptr() + end * per));
}

NdArray gradient_chunk(const Model& model, const NdArray& x, std::span<const int> labels) {
  Tape tape;
  Var in = tape.variable(x);
  const auto fr = model.forward(tape, in, {});
  Var loss = tape.cross_entropy(tape.softmax(fr.logits, 1.0), labels, Reduction::kSum);
  tape.backward(loss);
  return tape.grad(in);
}

// Gradient per frame; frames that fail numerically are flagged and get a zero row.
NdArray gradient_tolerant(const Model& model, const NdArray& x, std::span<const int> labels,
                          std::vector<std::uint8_t>& aborted) {
  const std::size_t n = x.dim(0), per = frame_dims(x);
  NdArray g(x.shape(), 0.0);
  for (std::size_t s = 0; s < n; s += kChunk) {
    const std::size_t e = std::min(n, s + kChunk);
    try {
      const NdArray gc = gradient_chunk(model, rows(x, s, e), labels.subspan(s, e - s));
      std::copy(gc.data().begin(), gc.data().end(), g.ptr() + s * per);
    } catch (const NumericError&) {
      for (std::size_t i = s; i < e; ++i) {
        try {
          const NdArray gi = gradient_chunk(model, rows(x, i, i + 1), labels.subspan(i, 1));
          std::copy(gi.data().begin(), gi.data().end(), g.ptr() + i * per);
        } catch (const NumericError&) {
          aborted[i] = 1;
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (aborted[i]) {
      std::fill(g.ptr() + i * per, g.ptr() + (i + 1) * per, 0.0);
      continue;
    }
    for (std::size_t k = 0; k < per; ++k) {
      if (!std::isfinite(g[i * per + k])) {
        aborted[i] = 1;
        std::fill(g.ptr() + i * per, g.ptr() + (i + 1) * per, 0.0);
        break;
      }
    }
  }
  return g;
}

NdArray add(const NdArray& a, const NdArray& b) {
  NdArray out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b[k];
  return out;
}

AdversarialBatch finish(const Model& model, const Batch& batch, NdArray delta, std::string provenance) {
  AdversarialBatch adv;
  adv.original = batch.x;
  adv.perturbed = add(batch.x, delta);
  adv.delta = std::move(delta);
  adv.labels = batch.labels;
  adv.snr_db = batch.snr_db;
  adv.predicted = predict_labels(model, adv.perturbed);
  adv.success.resize(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) adv.success[i] = adv.predicted[i] != adv.labels[i];
  adv.aborted.assign(adv.size(), 0);
  adv.provenance = std::move(provenance);
  return adv;
}

void check_budgets(const Batch& batch, std::span<const double> eps, const char* what) {
  if (eps.size() != batch.size()) throw ShapeError(std::string(what) + ": one budget per frame is required");
  for (double e : eps)
    if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError(std::string(what) + ": epsilon must be positive");
}

std::string kind_json(AttackKind kind) { return nlohmann::json{{"kind", attack_name(kind)}}.dump(); }

}  // namespace

std::string_view attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgm: return "fgm";
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kDeepFool: return "deepfool";
    case AttackKind::kUap: return "uap";
  }
  return "unknown";
}

AttackKind parse_attack(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  for (auto k : {AttackKind::kFgm, AttackKind::kFgsm, AttackKind::kPgd, AttackKind::kDeepFool, AttackKind::kUap})
    if (attack_name(k) == s) return k;
  throw ConfigError("unknown attack kind: " + std::string(name));
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double linear_to_db(double linear) { return 10.0 * std::log10(linear); }

double pnr_to_epsilon(double pnr_db, double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) throw ConfigError("signal power must be positive");
  return std::sqrt(db_to_linear(pnr_db) * signal_power / (db_to_linear(snr_db) + 1.0));
}

double epsilon_to_pnr_db(double epsilon, double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) throw ConfigError("signal power must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  return linear_to_db(epsilon * epsilon * (db_to_linear(snr_db) + 1.0) / signal_power);
}

double psr_db(double pnr_db, double snr_db) { return pnr_db - snr_db; }
double pnr_db_from_psr(double psr, double snr_db) { return psr + snr_db; }

double linf_from_l2(double eps2, std::size_t dims) { return eps2 / std::sqrt(static_cast<double>(dims)); }

Budget Budget::from_pnr(double pnr, double snr, double power) {
  return {pnr, amc::psr_db(pnr, snr), pnr_to_epsilon(pnr, snr, power), snr, power};
}

Budget Budget::from_epsilon(double eps, double snr, double power) {
  const double pnr = epsilon_to_pnr_db(eps, snr, power);
  return {pnr, amc::psr_db(pnr, snr), eps, snr, power};
}

void AttackConfig::validate() const {
  const bool budgeted = kind != AttackKind::kDeepFool;
  if (budgeted && !pnr_db && !(epsilon > 0.0)) throw ConfigError("attack needs a positive epsilon or a PNR");
  if (pnr_db && !std::isfinite(*pnr_db)) throw ConfigError("PNR must be finite");
  if (kind == AttackKind::kPgd && (pgd_iters < 1 || !(beta_frac > 0.0)))
    throw ConfigError("PGD needs iters >= 1 and a positive step");
  if (kind == AttackKind::kDeepFool && deepfool_iters < 1) throw ConfigError("DeepFool needs max_iters >= 1");
  if (overshoot < 0.0) throw ConfigError("overshoot must be nonnegative");
  if (kind == AttackKind::kUap && uap_probe < 2) throw ConfigError("UAP needs a probe of at least two frames");
}

std::string AttackConfig::to_json() const {
  nlohmann::json j{{"kind", attack_name(kind)}, {"seed", seed}};
  if (pnr_db) {
    j["pnr_db"] = *pnr_db;
  } else {
    j["epsilon"] = epsilon;
  }
  switch (kind) {
    case AttackKind::kPgd:
      j["beta_frac"] = beta_frac;
      j["pgd_iters"] = pgd_iters;
      break;
    case AttackKind::kDeepFool:
      j["overshoot"] = overshoot;
      j["max_iters"] = deepfool_iters;
      j["l2_clip"] = deepfool_clip;
      break;
    case AttackKind::kUap:
      j["probe"] = uap_probe;
      break;
    default:
      break;
  }
  return j.dump();
}

double AdversarialBatch::accuracy() const {
  if (labels.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predicted[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

NdArray input_gradient(const Model& model, const NdArray& x, std::span<const int> labels) {
  std::vector<std::uint8_t> aborted(x.dim(0), 0);
  NdArray g = gradient_tolerant(model, x, labels, aborted);
  if (std::any_of(aborted.begin(), aborted.end(), [](std::uint8_t a) { return a != 0; }))
    throw NumericError("non-finite input gradient");
  return g;
}

AdversarialBatch attack_fgm(const Model& model, const Batch& batch, std::span<const double> eps) {
  check_budgets(batch, eps, "FGM");
  const NdArray g = input_gradient(model, batch.x, batch.labels);
  const std::size_t per = frame_dims(batch.x);
  NdArray delta(batch.x.shape(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double* gi = g.ptr() + i * per;
    double norm = 0.0;
    for (std::size_t k = 0; k < per; ++k) norm += gi[k] * gi[k];
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (std::size_t k = 0; k < per; ++k) delta[i * per + k] = eps[i] * (gi[k] / norm);
  }
  return finish(model, batch, std::move(delta), kind_json(AttackKind::kFgm));
}

AdversarialBatch attack_fgsm(const Model& model, const Batch& batch, std::span<const double> eps) {
  check_budgets(batch, eps, "FGSM");
  const NdArray g = input_gradient(model, batch.x, batch.labels);
  const std::size_t per = frame_dims(batch.x);
  NdArray delta(batch.x.shape(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t k = 0; k < per; ++k) delta[i * per + k] = eps[i] * sign(g[i * per + k]);
  return finish(model, batch, std::move(delta), kind_json(AttackKind::kFgsm));
}

AdversarialBatch attack_pgd(const Model& model, const Batch& batch, std::span<const double> eps,
                            std::span<const double> beta, int iters) {
  check_budgets(batch, eps, "PGD");
  check_budgets(batch, beta, "PGD step");
  if (iters < 1) throw ConfigError("PGD needs at least one iteration");
  const std::size_t per = frame_dims(batch.x);
  NdArray delta(batch.x.shape(), 0.0);
  std::vector<std::uint8_t> aborted(batch.size(), 0);
  for (int t = 0; t < iters; ++t) {
    const NdArray g = gradient_tolerant(model, add(batch.x, delta), batch.labels, aborted);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (aborted[i]) continue;
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t j = i * per + k;
        delta[j] = std::clamp(delta[j] + beta[i] * sign(g[j]), -eps[i], eps[i]);
      }
    }
  }
  AdversarialBatch adv = finish(model, batch, std::move(delta), kind_json(AttackKind::kPgd));
  adv.aborted = std::move(aborted);
  return adv;
}

AdversarialBatch attack_deepfool(const Model& model, const Batch& batch, int max_iters, double overshoot,
                                 std::span<const double> l2_clip) {
  if (!l2_clip.empty() && l2_clip.size() != batch.size()) throw ShapeError("DeepFool: one clip radius per frame");
  if (max_iters < 1) throw ConfigError("DeepFool needs max_iters >= 1");
  if (overshoot < 0.0) throw ConfigError("overshoot must be nonnegative");
  const std::size_t n = batch.size(), per = frame_dims(batch.x), classes = model.num_classes();
  NdArray r_tot(batch.x.shape(), 0.0);
  NdArray delta(batch.x.shape(), 0.0);
  std::vector<std::uint8_t> aborted(n, 0);
  std::vector<std::size_t> active;
  {
    const auto pred = predict_labels(model, batch.x);
    for (std::size_t i = 0; i < n; ++i)
      if (pred[i] == batch.labels[i]) active.push_back(i);
  }
  for (int it = 0; it < max_iters && !active.empty(); ++it) {
    std::vector<std::size_t> still;
    for (std::size_t s = 0; s < active.size(); s += kChunk) {
      const std::size_t e = std::min(active.size(), s + kChunk);
      NdArray xc(model.input_shape(e - s));
      for (std::size_t r = s; r < e; ++r)
        for (std::size_t k = 0; k < per; ++k) xc[(r - s) * per + k] = batch.x[active[r] * per + k] + delta[active[r] * per + k];
      Tape tape;
      Var in = tape.variable(xc);
      Var logits;
      try {
        logits = model.forward(tape, in, {}).logits;
      } catch (const NumericError&) {
        for (std::size_t r = s; r < e; ++r) aborted[active[r]] = 1;
        continue;
      }
      const NdArray f = tape.value(logits);
      std::vector<NdArray> jac;
      for (std::size_t c = 0; c < classes; ++c) {
        NdArray seed(f.shape(), 0.0);
        for (std::size_t r = 0; r < e - s; ++r) seed[r * classes + c] = 1.0;
        tape.backward(logits, seed);
        jac.push_back(tape.grad(in));
      }
      for (std::size_t r = 0; r < e - s; ++r) {
        const std::size_t i = active[s + r];
        const auto l = static_cast<std::size_t>(batch.labels[i]);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_k = classes;
        double best_fk = 0.0, best_wn2 = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
          if (k == l) continue;
          double wn2 = 0.0;
          for (std::size_t q = 0; q < per; ++q) {
            const double w = jac[k][r * per + q] - jac[l][r * per + q];
            wn2 += w * w;
          }
          if (wn2 == 0.0 || !std::isfinite(wn2)) continue;
          const double fk = f[r * classes + k] - f[r * classes + l];
          const double dist = std::abs(fk) / std::sqrt(wn2);
          if (dist < best) {
            best = dist;
            best_k = k;
            best_fk = fk;
            best_wn2 = wn2;
          }
        }
        if (best_k == classes) continue;
        const double step = std::abs(best_fk) / best_wn2;
        for (std::size_t q = 0; q < per; ++q) {
          const std::size_t j = i * per + q;
          r_tot[j] += step * (jac[best_k][r * per + q] - jac[l][r * per + q]);
          delta[j] = (1.0 + overshoot) * r_tot[j];
        }
        still.push_back(i);
      }
    }
    std::sort(still.begin(), still.end());
    active.clear();
    if (still.empty()) break;
    NdArray xs(model.input_shape(still.size()));
    for (std::size_t r = 0; r < still.size(); ++r)
      for (std::size_t k = 0; k < per; ++k) xs[r * per + k] = batch.x[still[r] * per + k] + delta[still[r] * per + k];
    const auto pred = predict_labels(model, xs);
    for (std::size_t r = 0; r < still.size(); ++r)
      if (pred[r] == batch.labels[still[r]]) active.push_back(still[r]);
  }
  AdversarialBatch adv = finish(model, batch, std::move(delta), kind_json(AttackKind::kDeepFool));
  adv.aborted = std::move(aborted);
  return l2_clip.empty() ? adv : clip_l2(model, adv, l2_clip);
}

AdversarialBatch clip_l2(const Model& model, const AdversarialBatch& adv, std::span<const double> l2_clip) {
  if (l2_clip.size() != adv.size()) throw ShapeError("clip: one radius per frame");
  const std::size_t per = frame_dims(adv.original);
  NdArray delta = adv.delta;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < per; ++k) norm += delta[i * per + k] * delta[i * per + k];
    norm = std::sqrt(norm);
    if (norm > l2_clip[i])
      for (std::size_t k = 0; k < per; ++k) delta[i * per + k] *= l2_clip[i] / norm;
  }
  Batch batch{adv.original, adv.labels, adv.snr_db};
  AdversarialBatch out = finish(model, batch, std::move(delta), adv.provenance);
  out.aborted = adv.aborted;
  return out;
}

NdArray fit_uap_pca(const Model& model, const Batch& probe, double eps) {
  if (probe.size() < 2) throw ConfigError("UAP probe needs at least two frames");
  if (!(eps > 0.0)) throw ConfigError("UAP epsilon must be positive");
  const NdArray g = input_gradient(model, probe.x, probe.labels);
  const auto dims = static_cast<Eigen::Index>(frame_dims(probe.x));
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dims, dims);
  std::size_t used = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    Eigen::Map<const Eigen::VectorXd> row(g.ptr() + i * static_cast<std::size_t>(dims), dims);
    const double norm = row.norm();
    if (norm == 0.0) continue;
    c.selfadjointView<Eigen::Lower>().rankUpdate(row / norm);
    ++used;
  }
  if (used == 0) throw NumericError("UAP: every probe gradient is zero");
  c = c.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  if (eig.info() != Eigen::Success) throw NumericError("UAP: eigen decomposition failed");
  const Eigen::VectorXd v = eig.eigenvectors().col(dims - 1).normalized();

  const std::size_t n = model.arch().input_length;
  NdArray plus({model.arch().input_rows, n}), minus({model.arch().input_rows, n});
  for (Eigen::Index k = 0; k < dims; ++k) {
    plus[static_cast<std::size_t>(k)] = eps * v(k);
    minus[static_cast<std::size_t>(k)] = -eps * v(k);
  }
  auto mean_loss_with = [&](const NdArray& d) {
    NdArray x = probe.x;
    for (std::size_t i = 0; i < probe.size(); ++i)
      for (std::size_t k = 0; k < d.size(); ++k) x[i * d.size() + k] += d[k];
    double total = 0.0;
    for (double l : per_frame_loss(model, x, probe.labels)) total += l;
    return total;
  };
  return mean_loss_with(plus) >= mean_loss_with(minus) ? plus : minus;
}

AdversarialBatch apply_uap(const Model& model, const Batch& batch, const NdArray& delta) {
  const std::size_t per = frame_dims(batch.x);
  if (delta.size() != per) throw ShapeError("UAP shape " + shape_str(delta.shape()) + " does not match frame shape");
  NdArray full(batch.x.shape(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) std::copy(delta.data().begin(), delta.data().end(), full.ptr() + i * per);
  return finish(model, batch, std::move(full), kind_json(AttackKind::kUap));
}

std::vector<double> frame_budgets(const AttackConfig& config, const Batch& batch) {
  const std::size_t per = frame_dims(batch.x);
  std::vector<double> eps(batch.size(), config.epsilon);
  if (config.pnr_db) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double power = signal_power(std::span<const double>(batch.x.ptr() + i * per, per));
      eps[i] = pnr_to_epsilon(*config.pnr_db, batch.snr_db[i], power);
    }
    if (config.kind == AttackKind::kFgsm || config.kind == AttackKind::kPgd)
      for (double& e : eps) e = linf_from_l2(e, per);
  }
  return eps;
}

AdversarialBatch run_attack(const Model& model, const Batch& batch, const AttackConfig& config, const Batch* uap_probe) {
  config.validate();
  AdversarialBatch adv;
  if (config.kind == AttackKind::kDeepFool) {
    std::vector<double> clip;
    if (config.pnr_db) {
      clip = frame_budgets(config, batch);
    } else if (config.deepfool_clip > 0.0) {
      clip.assign(batch.size(), config.deepfool_clip);
    }
    adv = attack_deepfool(model, batch, config.deepfool_iters, config.overshoot, clip);
  } else {
    const auto eps = frame_budgets(config, batch);
    switch (config.kind) {
      case AttackKind::kFgm:
        adv = attack_fgm(model, batch, eps);
        break;
      case AttackKind::kFgsm:
        adv = attack_fgsm(model, batch, eps);
        break;
      case AttackKind::kPgd: {
        std::vector<double> beta(eps.size());
        for (std::size_t i = 0; i < eps.size(); ++i) beta[i] = config.beta_frac * eps[i];
        adv = attack_pgd(model, batch, eps, beta, config.pgd_iters);
        break;
      }
      case AttackKind::kUap: {
        if (!uap_probe) throw ConfigError("UAP needs a probe batch");
        // One delta for every frame, so it takes the tightest frame budget.
        const double radius = eps.empty() ? config.epsilon : *std::min_element(eps.begin(), eps.end());
        adv = apply_uap(model, batch, fit_uap_pca(model, *uap_probe, radius));
        break;
      }
      default:
        break;
    }
  }
  adv.provenance = config.to_json();
  return adv;
}

void save_adversarial_batch(const AdversarialBatch& adv, const std::vector<std::string>& class_names,
                            const std::string& path) {
  Dataset ds;
  ds.length = adv.perturbed.dim(3);
  ds.class_names = class_names;
  ds.provenance.source = "adversarial";
  ds.provenance.config_hash = sha256_hex(adv.provenance);
  const std::size_t per = frame_dims(adv.perturbed);
  for (std::size_t i = 0; i < adv.size(); ++i) {
    IqFrame f;
    f.samples.resize(per);
    for (std::size_t k = 0; k < per; ++k) f.samples[k] = static_cast<float>(adv.perturbed[i * per + k]);
    f.snr_db = static_cast<float>(adv.snr_db[i]);
    f.label = static_cast<std::uint16_t>(adv.labels[i]);
    ds.frames.push_back(std::move(f));
  }
  ByteWriter w;
  w.raw(encode_dataset(ds));
  w.raw(std::string_view(kDeltaMagic, 4));
  w.u64(adv.size());
  w.u64(per);
  for (double d : adv.delta.data()) w.f32(static_cast<float>(d));
  w.raw(adv.success);
  w.raw(adv.aborted);
  w.u64(adv.provenance.size());
  w.raw(adv.provenance);
  write_file(path, w.bytes());
}

AdversarialFile load_adversarial_batch(const std::string& path) {
  const auto bytes = read_file(path);
  std::size_t consumed = 0;
  AdversarialFile out;
  out.perturbed = decode_dataset(bytes, &consumed);
  ByteReader r(std::span<const std::uint8_t>(bytes).subspan(consumed));
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kDeltaMagic)) throw FormatError("adversarial batch: missing delta section");
  const std::uint64_t count = r.u64();
  const std::uint64_t per = r.u64();
  if (count != out.perturbed.size() || per != 2 * out.perturbed.length)
    throw FormatError("adversarial batch: delta section does not match frames");
  out.delta.resize(count * per);
  for (auto& d : out.delta) d = r.f32();
  const auto s = r.raw(count);
  out.success.assign(s.begin(), s.end());
  const auto a = r.raw(count);
  out.aborted.assign(a.begin(), a.end());
  const auto text = r.raw(r.u64());
  out.provenance.assign(text.begin(), text.end());
  if (r.remaining() != 0) throw FormatError("adversarial batch: trailing bytes");
  return out;
}

}  // namespace amc
