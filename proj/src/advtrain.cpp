#include "amc/advtrain.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "amc/attack.hpp"
#include "amc/error.hpp"

namespace amc {

namespace {

std::vector<double> l2_budgets(const AdvTrainConfig& c, const Batch& b) {
  const std::size_t per = b.x.size() / std::max<std::size_t>(b.size(), 1);
  std::vector<double> eps(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    eps[i] = c.epsilon ? *c.epsilon
                       : pnr_to_epsilon(c.pnr_db, c.ref_snr_db,
                                        signal_power(std::span<const double>(b.x.ptr() + i * per, per)));
  }
  return eps;
}

NdArray pgd_rows(const Model& model, const Batch& b, const AdvTrainConfig& c) {
  auto eps = l2_budgets(c, b);
  const std::size_t per = b.x.size() / b.size();
  std::vector<double> beta(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    eps[i] = linf_from_l2(eps[i], per);
    beta[i] = c.beta_frac * eps[i];
  }
  auto adv = attack_pgd(model, b, eps, beta, c.pgd_iters);
  if (std::any_of(adv.aborted.begin(), adv.aborted.end(), [](std::uint8_t a) { return a != 0; }))
    throw NumericError("PGD gradient became non-finite");
  return std::move(adv.perturbed);
}

NdArray fgsm_rows(const Model& model, const Batch& b, const AdvTrainConfig& c) {
  auto eps = l2_budgets(c, b);
  const std::size_t per = b.x.size() / b.size();
  for (double& e : eps) e = linf_from_l2(e, per);
  return std::move(attack_fgsm(model, b, eps).perturbed);
}

void overwrite_rows(Batch& batch, std::size_t begin, const NdArray& rows) {
  std::copy(rows.data().begin(), rows.data().end(), batch.x.ptr() + begin * (batch.x.size() / batch.size()));
}

// Adversarial copies of every training frame against a fixed model.
struct Precomputed {
  NdArray pgd;
  NdArray fgsm;
};

Precomputed precompute_all(const Model& model, const Dataset& train, const AdvTrainConfig& c, BatchMix mix_any) {
  const std::size_t per = 2 * train.length;
  Precomputed p{NdArray({train.size(), per}), NdArray({train.size(), per})};
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < train.size(); s += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, train.size() - s));
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = s + k;
    const Batch b = make_batch(train, idx);
    if (mix_any.pgd) {
      const NdArray r = pgd_rows(model, b, c);
      std::copy(r.data().begin(), r.data().end(), p.pgd.ptr() + s * per);
    }
    if (mix_any.fgsm) {
      const NdArray r = fgsm_rows(model, b, c);
      std::copy(r.data().begin(), r.data().end(), p.fgsm.ptr() + s * per);
    }
  }
  return p;
}

class FreezeScope {
 public:
  FreezeScope(Model& model, const std::vector<std::string>& names) : model_(model) {
    for (const auto& g : model.groups()) saved_.push_back(g.frozen);
    for (const auto& n : names) model.set_frozen(n, true);
  }
  ~FreezeScope() {
    for (std::size_t i = 0; i < saved_.size(); ++i) model_.groups()[i].frozen = saved_[i];
  }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  Model& model_;
  std::vector<bool> saved_;
};

}  // namespace

void AdvTrainConfig::validate() const {
  if (pgd_fraction < 0.0 || fgsm_fraction < 0.0 || pgd_fraction + fgsm_fraction > 1.0 + 1e-12)
    throw ConfigError("adversarial fractions must be nonnegative and sum to at most 1");
  if (pgd_fraction > 0.0 && (pgd_iters < 1 || !(beta_frac > 0.0)))
    throw ConfigError("PGD needs iters >= 1 and a positive step");
  if (epsilon && !(*epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!std::isfinite(pnr_db) || !std::isfinite(ref_snr_db)) throw ConfigError("PNR and SNR must be finite");
}

std::string AdvTrainConfig::to_json() const {
  nlohmann::json j{{"pnr_db", pnr_db},
                   {"ref_snr_db", ref_snr_db},
                   {"beta_frac", beta_frac},
                   {"pgd_iters", pgd_iters},
                   {"pgd_fraction", pgd_fraction},
                   {"fgsm_fraction", fgsm_fraction},
                   {"freeze", freeze},
                   {"precompute", precompute},
                   {"epochs", train.epochs},
                   {"batch_size", train.batch_size},
                   {"learning_rate", train.optimizer.learning_rate},
                   {"momentum", train.optimizer.momentum},
                   {"lr_decay", train.lr_decay},
                   {"seed", train.seed}};
  if (epsilon) j["epsilon"] = *epsilon;
  return j.dump();
}

BatchMix batch_mix(std::size_t batch_size, const AdvTrainConfig& config) {
  BatchMix m;
  m.pgd = static_cast<std::size_t>(std::floor(static_cast<double>(batch_size) * config.pgd_fraction + 1e-9));
  m.fgsm = static_cast<std::size_t>(std::floor(static_cast<double>(batch_size) * config.fgsm_fraction + 1e-9));
  m.fgsm = std::min(m.fgsm, batch_size - m.pgd);
  m.clean = batch_size - m.pgd - m.fgsm;
  return m;
}

TrainHistory adversarial_train(Model& model, const Dataset& train, const AdvTrainConfig& config) {
  config.validate();
  for (const auto& name : config.freeze)
    if (!model.has_group(name)) throw ConfigError("cannot freeze unknown layer " + name);

  const BatchMix full = batch_mix(config.train.batch_size, config);
  std::optional<Precomputed> pre;
  if (config.precompute && (full.pgd || full.fgsm)) pre = precompute_all(model, train, config, full);

  BatchHook hook = [&](const Model& m, Batch& batch, std::span<const std::size_t> idx, int, std::size_t) {
    const BatchMix mix = batch_mix(batch.size(), config);
    const std::size_t per = batch.x.size() / batch.size();
    if (pre) {
      for (std::size_t r = 0; r < mix.pgd; ++r)
        std::copy_n(pre->pgd.ptr() + idx[r] * per, per, batch.x.ptr() + r * per);
      for (std::size_t r = mix.pgd; r < mix.pgd + mix.fgsm; ++r)
        std::copy_n(pre->fgsm.ptr() + idx[r] * per, per, batch.x.ptr() + r * per);
      return;
    }
    if (mix.pgd) overwrite_rows(batch, 0, pgd_rows(m, slice(batch, 0, mix.pgd), config));
    if (mix.fgsm) overwrite_rows(batch, mix.pgd, fgsm_rows(m, slice(batch, mix.pgd, mix.pgd + mix.fgsm), config));
  };

  TrainHistory h;
  h.initial_loss = mean_loss(model, train);
  {
    FreezeScope scope(model, config.freeze);
    h.epoch_loss = fit(
        model, train, config.train,
        [](Tape& t, const ForwardResult& fr, const Batch& b) {
          return t.cross_entropy(t.softmax(fr.logits, 1.0), b.labels);
        },
        hook);
  }
  h.final_loss = config.train.epochs > 0 ? mean_loss(model, train) : h.initial_loss;
  if (config.train.epochs > 0) {
    auto& meta = model.meta();
    meta.provenance += "-adv";
    meta.history.push_back({"advtrain", config.train.seed, config.train.epochs, h.epoch_loss});
    nlohmann::json notes = meta.notes_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta.notes_json);
    notes["advtrain"] = nlohmann::json::parse(config.to_json());
    meta.notes_json = notes.dump();
  }
  return h;
}

}  // namespace amc
