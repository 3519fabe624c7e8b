#include "amc/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <set>

#include "amc/advtrain.hpp"
#include "amc/distill.hpp"
#include "amc/error.hpp"
#include "amc/prune.hpp"
#include "amc/util.hpp"

namespace amc {

namespace {

using json = nlohmann::json;

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

json attack_json(const AttackConfig& a) {
  json j = json::parse(a.to_json());
  j.erase("pnr_db");
  j.erase("epsilon");
  return j;
}

std::size_t nonzero(const Model& m) {
  std::size_t n = 0;
  for (const auto& g : m.groups()) {
    for (double v : g.weight.data()) n += v != 0.0;
    for (double v : g.bias.data()) n += v != 0.0;
  }
  return n;
}

}  // namespace

const ModelSummary& EvalReport::model(const std::string& tag) const {
  for (const auto& m : models)
    if (m.tag == tag) return m;
  throw ConfigError("report has no model " + tag);
}

const AttackCurve& EvalReport::curve(const std::string& model, const std::string& attack) const {
  for (const auto& c : curves)
    if (c.model == model && c.attack == attack) return c;
  throw ConfigError("report has no " + attack + " curve for " + model);
}

std::string EvalConfig::to_json() const {
  json attacks_j = json::array();
  for (const auto& a : attacks) attacks_j.push_back(attack_json(a));
  return json{{"pnr_db", pnr_db},
              {"snr_db", snr_db ? json(*snr_db) : json(nullptr)},
              {"attacks", attacks_j},
              {"uap_probe", uap_probe},
              {"monotone_slack", monotone_slack},
              {"seed", seed}}
      .dump();
}

AttackConfig attack_from_json(const std::string& text) {
  const json j = json::parse(text);
  AttackConfig a;
  a.kind = parse_attack(j.at("kind").get<std::string>());
  a.epsilon = j.value("epsilon", 0.0);
  if (j.contains("pnr_db") && !j["pnr_db"].is_null()) a.pnr_db = j["pnr_db"].get<double>();
  a.beta_frac = j.value("beta_frac", a.beta_frac);
  a.pgd_iters = j.value("pgd_iters", a.pgd_iters);
  a.overshoot = j.value("overshoot", a.overshoot);
  a.deepfool_iters = j.value("max_iters", a.deepfool_iters);
  a.deepfool_clip = j.value("l2_clip", a.deepfool_clip);
  a.uap_probe = j.value("probe", a.uap_probe);
  a.seed = j.value("seed", a.seed);
  return a;
}

void check_separation(const Model& model, const Dataset& test) {
  const auto& meta = model.meta();
  if (meta.train_hash.empty()) return;
  if (test.content_hash() == meta.train_hash)
    throw ContaminationError("evaluation set is the model's training set");
  if (!meta.split_id.empty() && test.provenance.split_id == meta.split_id && test.provenance.role != "test")
    throw ContaminationError("evaluation set comes from the training side of the model's split");
}

AttackCurve evaluate_under_attack(const Model& model, const Dataset& test, const AttackConfig& attack,
                                  std::span<const double> pnr_list, std::optional<double> snr_filter,
                                  std::uint64_t seed, std::size_t uap_probe) {
  check_separation(model, test);
  const Dataset slice_ds = snr_filter ? filter_snr(test, *snr_filter) : test;
  if (slice_ds.frames.empty()) throw ConfigError("no test frames at the requested SNR");
  const Batch batch = make_batch(slice_ds);

  AttackCurve curve;
  curve.attack = std::string(attack_name(attack.kind));
  curve.snr_db = snr_filter ? *snr_filter : std::nan("");
  curve.attack_json = attack_json(attack).dump();

  std::optional<Batch> probe;
  if (attack.kind == AttackKind::kUap) {
    const std::size_t per_class = std::max<std::size_t>(1, uap_probe / slice_ds.num_classes());
    probe = make_batch(slice_ds, stratified_sample(slice_ds, per_class, derive_seed(seed, "uap-probe")));
  }
  std::vector<double> sorted(pnr_list.begin(), pnr_list.end());
  std::sort(sorted.begin(), sorted.end());
  // The unclipped DeepFool result does not depend on the budget; each PNR
  // point is that result clipped to the point's per-frame radius.
  std::optional<AdversarialBatch> unclipped;
  if (attack.kind == AttackKind::kDeepFool)
    unclipped = attack_deepfool(model, batch, attack.deepfool_iters, attack.overshoot);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    AttackConfig cfg = attack;
    cfg.pnr_db = sorted[i];
    cfg.seed = derive_seed(seed, curve.attack, i);
    const auto adv = unclipped ? clip_l2(model, *unclipped, frame_budgets(cfg, batch))
                               : run_attack(model, batch, cfg, probe ? &*probe : nullptr);
    curve.points.push_back({sorted[i], adv.accuracy(), adv.size(), cfg.seed});
  }
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    if (curve.points[i].accuracy > curve.points[i - 1].accuracy + 0.03) curve.monotone = false;
  return curve;
}

EvalReport compare_report(std::span<const TaggedModel> models, const Dataset& test, const EvalConfig& config) {
  if (models.empty()) throw ConfigError("no models to compare");
  std::set<std::string> tags;
  for (const auto& m : models) {
    if (!m.model) throw ConfigError("null model for tag " + m.tag);
    if (!tags.insert(m.tag).second) throw ConfigError("duplicate model tag " + m.tag);
    if (m.model->num_classes() != models[0].model->num_classes())
      throw ConfigError("models disagree on the number of classes");
    if (m.model->input_shape(1) != models[0].model->input_shape(1)) throw ShapeError("models disagree on input shape");
  }
  if (test.num_classes() != models[0].model->num_classes()) throw ConfigError("test set classes do not match models");

  EvalReport report;
  report.config_json = config.to_json();
  const Dataset slice_ds = config.snr_db ? filter_snr(test, *config.snr_db) : test;
  if (slice_ds.frames.empty()) throw ConfigError("no test frames at the requested SNR");
  for (const auto& m : models) {
    check_separation(*m.model, test);
    const auto acc = accuracy_report(*m.model, slice_ds);
    report.models.push_back({m.tag, m.model->meta().provenance, acc.accuracy, acc.total,
                             count_params(*m.model).total, nonzero(*m.model)});
  }
  for (const auto& m : models) {
    for (const auto& a : config.attacks) {
      AttackCurve c = evaluate_under_attack(*m.model, test, a, config.pnr_db, config.snr_db,
                                            derive_seed(config.seed, "eval/" + m.tag), config.uap_probe);
      c.model = m.tag;
      c.monotone = true;
      for (std::size_t i = 1; i < c.points.size(); ++i)
        if (c.points[i].accuracy > c.points[i - 1].accuracy + config.monotone_slack) c.monotone = false;
      report.curves.push_back(std::move(c));
    }
  }
  for (const auto& m : report.models) {
    for (const auto& other : report.models) {
      if (other.tag == m.tag + "-adv") report.at_pairs.push_back({m.tag, other.tag, m.clean_accuracy - other.clean_accuracy});
    }
  }
  return report;
}

std::string report_to_json(const EvalReport& r) {
  json models = json::array();
  for (const auto& m : r.models) {
    models.push_back(json{{"tag", m.tag},
                          {"provenance", m.provenance},
                          {"clean_accuracy", m.clean_accuracy},
                          {"n", m.n},
                          {"params", m.params},
                          {"nonzero_params", m.nonzero_params}});
  }
  json curves = json::array();
  for (const auto& c : r.curves) {
    json pts = json::array();
    for (const auto& p : c.points)
      pts.push_back(json{{"pnr_db", p.pnr_db}, {"accuracy", p.accuracy}, {"n", p.n}, {"seed", p.seed}});
    curves.push_back(json{{"model", c.model},
                          {"attack", c.attack},
                          {"snr_db", std::isnan(c.snr_db) ? json(nullptr) : json(c.snr_db)},
                          {"attack_config", json::parse(c.attack_json)},
                          {"monotone", c.monotone},
                          {"points", pts}});
  }
  json pairs = json::array();
  for (const auto& p : r.at_pairs) pairs.push_back(json{{"base", p.base}, {"adv", p.adv}, {"clean_drop", p.clean_drop}});
  json artifacts = json::array();
  for (const auto& a : r.artifacts) artifacts.push_back(json{{"name", a.name}, {"kind", a.kind}, {"sha256", a.sha256}});
  return json{{"format_version", r.format_version},
              {"config", json::parse(r.config_json)},
              {"models", models},
              {"curves", curves},
              {"at_pairs", pairs},
              {"artifacts", artifacts}}
             .dump(2) +
         "\n";
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.format_version = j.at("format_version").get<int>();
    if (r.format_version != kReportFormatVersion)
      throw FormatError("unsupported report format version " + std::to_string(r.format_version));
    r.config_json = j.at("config").dump();
    for (const auto& m : j.at("models")) {
      r.models.push_back({m.at("tag").get<std::string>(), m.at("provenance").get<std::string>(),
                          m.at("clean_accuracy").get<double>(), m.at("n").get<std::size_t>(),
                          m.at("params").get<std::size_t>(), m.at("nonzero_params").get<std::size_t>()});
    }
    for (const auto& c : j.at("curves")) {
      AttackCurve curve;
      curve.model = c.at("model").get<std::string>();
      curve.attack = c.at("attack").get<std::string>();
      curve.snr_db = c.at("snr_db").is_null() ? std::nan("") : c.at("snr_db").get<double>();
      curve.attack_json = c.at("attack_config").dump();
      curve.monotone = c.at("monotone").get<bool>();
      for (const auto& p : c.at("points"))
        curve.points.push_back({p.at("pnr_db").get<double>(), p.at("accuracy").get<double>(),
                                p.at("n").get<std::size_t>(), p.at("seed").get<std::uint64_t>()});
      r.curves.push_back(std::move(curve));
    }
    for (const auto& p : j.at("at_pairs"))
      r.at_pairs.push_back({p.at("base").get<std::string>(), p.at("adv").get<std::string>(),
                            p.at("clean_drop").get<double>()});
    for (const auto& a : j.at("artifacts"))
      r.artifacts.push_back({a.at("name").get<std::string>(), a.at("kind").get<std::string>(),
                             a.at("sha256").get<std::string>()});
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad report JSON: ") + e.what());
  }
  return r;
}

std::string report_to_csv(const EvalReport& r) {
  std::string out = "model,attack,pnr_db,snr_db,accuracy,n,seed\n";
  for (const auto& c : r.curves) {
    for (const auto& p : c.points) {
      out += c.model + "," + c.attack + "," + num(p.pnr_db) + "," + (std::isnan(c.snr_db) ? "" : num(c.snr_db)) + "," +
             num(p.accuracy) + "," + std::to_string(p.n) + "," + std::to_string(p.seed) + "\n";
    }
  }
  return out;
}

void export_report(const EvalReport& report, const std::string& format, const std::string& path) {
  std::string text;
  if (format == "json") {
    text = report_to_json(report);
  } else if (format == "csv") {
    text = report_to_csv(report);
  } else {
    throw ConfigError("unknown report format " + format);
  }
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

const std::vector<std::string> kStages{"dataset", "train", "teacher", "distill", "prune", "advtrain", "eval"};

TrainConfig train_from_json(const json& j, const TrainConfig& defaults) {
  TrainConfig t = defaults;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.optimizer.learning_rate = j.value("lr", t.optimizer.learning_rate);
  t.optimizer.momentum = j.value("momentum", t.optimizer.momentum);
  t.lr_decay = j.value("lr_decay", t.lr_decay);
  const std::string method = j.value("optimizer", std::string(t.optimizer.method == OptimizerMethod::kAdam ? "adam" : "sgd"));
  if (method == "adam") {
    t.optimizer.method = OptimizerMethod::kAdam;
  } else if (method == "sgd") {
    t.optimizer.method = OptimizerMethod::kSgd;
  } else {
    throw ConfigError("unknown optimizer " + method);
  }
  return t;
}

json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr", t.optimizer.learning_rate},
              {"momentum", t.optimizer.momentum},
              {"lr_decay", t.lr_decay},
              {"optimizer", t.optimizer.method == OptimizerMethod::kAdam ? "adam" : "sgd"}};
}

TrainConfig default_train() {
  TrainConfig t;
  t.epochs = 12;
  t.lr_decay = 0.85;
  return t;
}

std::vector<double> grid_from(const json& j, const std::string& list_key, const std::string& prefix,
                              std::vector<double> fallback) {
  if (j.contains(list_key)) return j.at(list_key).get<std::vector<double>>();
  if (j.contains(prefix + "_min"))
    return snr_grid(j.at(prefix + "_min").get<double>(), j.at(prefix + "_max").get<double>(),
                    j.value(prefix + "_step", 2.0));
  return fallback;
}

// Fully resolved pipeline settings; `echo` is what the report records.
struct Plan {
  std::uint64_t seed = 0;
  std::vector<std::string> stages;
  std::optional<std::string> dataset_path;
  GeneratorConfig gen;
  double train_fraction = 0.5;
  std::string student_arch = "desk-student";
  std::string teacher_arch = "desk-teacher";
  double student_dropout = 0.0;
  double teacher_dropout = 0.0;
  TrainConfig student_train;
  TrainConfig teacher_train;
  DistillConfig distill;
  PruneConfig prune;
  AdvTrainConfig adv;
  EvalConfig eval;
  std::vector<std::string> eval_models;

  bool has(const std::string& s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }
  json echo() const;
};

Plan parse_plan(const json& j, std::optional<std::uint64_t> seed_override) {
  Plan p;
  p.seed = seed_override ? *seed_override : j.value("seed", std::uint64_t{0});
  p.stages = j.value("stages", kStages);
  for (const auto& s : p.stages)
    if (std::find(kStages.begin(), kStages.end(), s) == kStages.end()) throw ConfigError("unknown stage " + s);

  const json d = j.value("dataset", json::object());
  if (d.contains("path")) p.dataset_path = d.at("path").get<std::string>();
  p.gen.classes = d.value("classes", std::vector<std::string>{"BPSK", "QPSK", "8PSK", "QAM16"});
  p.gen.snr_grid_db = grid_from(d, "snr_db", "snr", {10.0});
  p.gen.frames_per_cell = d.value("per_cell", std::size_t{2000});
  p.gen.length = d.value("length", std::size_t{128});
  p.gen.normalize = d.value("normalize", true);
  p.gen.seed = derive_seed(p.seed, "dataset");
  p.train_fraction = d.value("train_fraction", 0.5);

  const json s = j.value("student", json::object());
  p.student_arch = s.value("arch", p.student_arch);
  p.student_dropout = s.value("dropout", 0.0);
  p.student_train = train_from_json(s, default_train());
  p.student_train.seed = derive_seed(p.seed, "train");

  const json t = j.value("teacher", json::object());
  p.teacher_arch = t.value("arch", p.teacher_arch);
  p.teacher_dropout = t.value("dropout", 0.0);
  p.teacher_train = train_from_json(t, default_train());
  p.teacher_train.seed = derive_seed(p.seed, "teacher-train");

  const json k = j.value("distill", json::object());
  p.distill.temperature = k.value("temperature", p.distill.temperature);
  p.distill.alpha = k.value("alpha", p.distill.alpha);
  p.distill.literal_alg1 = k.value("literal_alg1", false);
  p.distill.t_squared = k.value("t_squared", false);
  p.distill.train = train_from_json(k, p.student_train);
  p.distill.train.seed = p.student_train.seed;
  p.distill.validate();

  const json pr = j.value("prune", json::object());
  p.prune.layer = pr.value("layer", p.prune.layer);
  p.prune.eta = pr.value("eta", p.prune.eta);
  p.prune.eta_relative = pr.value("eta_relative", false);
  p.prune.probe_size = pr.value("probe", p.prune.probe_size);
  p.prune.normalize_probe = pr.value("normalize_probe", true);
  p.prune.admm.rho = pr.value("rho", p.prune.admm.rho);
  p.prune.admm.max_iters = pr.value("max_iters", p.prune.admm.max_iters);
  p.prune.admm.abs_tol = pr.value("abs_tol", p.prune.admm.abs_tol);
  p.prune.admm.rel_tol = pr.value("rel_tol", p.prune.admm.rel_tol);
  p.prune.admm.adaptive_rho = pr.value("adaptive_rho", p.prune.admm.adaptive_rho);
  p.prune.seed = derive_seed(p.seed, "prune");
  p.prune.validate();

  const json a = j.value("advtrain", json::object());
  p.adv.pnr_db = a.value("pnr_db", p.adv.pnr_db);
  p.adv.ref_snr_db = a.value("ref_snr_db", p.adv.ref_snr_db);
  if (a.contains("epsilon")) p.adv.epsilon = a.at("epsilon").get<double>();
  if (a.contains("mix")) {
    const auto mix = a.at("mix").get<std::vector<double>>();
    if (mix.size() != 2) throw ConfigError("advtrain mix needs two fractions (PGD, FGSM)");
    p.adv.pgd_fraction = mix[0];
    p.adv.fgsm_fraction = mix[1];
  }
  p.adv.pgd_iters = a.value("pgd_iters", p.adv.pgd_iters);
  p.adv.beta_frac = a.value("beta_frac", p.adv.beta_frac);
  p.adv.freeze = a.value("freeze", p.adv.freeze);
  p.adv.precompute = a.value("precompute", false);
  p.adv.train = train_from_json(a, [] {
    TrainConfig t = default_train();
    t.epochs = 10;
    t.optimizer.learning_rate = 0.02;
    t.lr_decay = 0.9;
    return t;
  }());
  p.adv.train.seed = derive_seed(p.seed, "advtrain");
  p.adv.validate();

  const json e = j.value("eval", json::object());
  p.eval.pnr_db = grid_from(e, "pnr_db", "pnr", p.eval.pnr_db);
  if (e.contains("snr_db")) {
    if (e["snr_db"].is_null()) {
      p.eval.snr_db.reset();
    } else {
      p.eval.snr_db = e["snr_db"].get<double>();
    }
  }
  p.eval.uap_probe = e.value("uap_probe", p.eval.uap_probe);
  p.eval.monotone_slack = e.value("monotone_slack", p.eval.monotone_slack);
  p.eval.seed = derive_seed(p.seed, "eval");
  for (const auto& name : e.value("attacks", std::vector<std::string>{"fgm", "fgsm", "pgd", "deepfool", "uap"})) {
    AttackConfig ac;
    ac.kind = parse_attack(name);
    ac.beta_frac = e.value("beta_frac", ac.beta_frac);
    ac.pgd_iters = e.value("pgd_iters", ac.pgd_iters);
    ac.overshoot = e.value("overshoot", ac.overshoot);
    ac.deepfool_iters = e.value("deepfool_iters", ac.deepfool_iters);
    ac.uap_probe = p.eval.uap_probe;
    p.eval.attacks.push_back(ac);
  }
  p.eval_models = e.value("models", std::vector<std::string>{});

  auto need = [&](const std::string& stage, const std::string& dep, const std::string& why) {
    if (p.has(stage) && !p.has(dep)) throw ConfigError("stage " + stage + " requires stage " + dep + " (" + why + ")");
  };
  for (const auto& st : {"train", "teacher", "distill", "prune", "advtrain", "eval"})
    need(st, "dataset", "needs data");
  need("distill", "teacher", "distillation needs a teacher");
  need("prune", "distill", "pruning applies to the distilled model");
  if (p.has("advtrain") && !p.has("train") && !p.has("distill"))
    throw ConfigError("stage advtrain requires a trained model stage");
  if (p.has("eval") && !p.has("train") && !p.has("distill") && !p.has("teacher"))
    throw ConfigError("stage eval requires a trained model stage");
  return p;
}

json Plan::echo() const {
  json prune_j{{"layer", prune.layer},
               {"eta", prune.eta},
               {"eta_relative", prune.eta_relative},
               {"probe", prune.probe_size},
               {"normalize_probe", prune.normalize_probe},
               {"rho", prune.admm.rho},
               {"max_iters", prune.admm.max_iters},
               {"abs_tol", prune.admm.abs_tol},
               {"rel_tol", prune.admm.rel_tol},
               {"adaptive_rho", prune.admm.adaptive_rho}};
  json adv_j = train_to_json(adv.train);
  adv_j.update(json{{"pnr_db", adv.pnr_db},
                    {"ref_snr_db", adv.ref_snr_db},
                    {"mix", {adv.pgd_fraction, adv.fgsm_fraction}},
                    {"pgd_iters", adv.pgd_iters},
                    {"beta_frac", adv.beta_frac},
                    {"freeze", adv.freeze},
                    {"precompute", adv.precompute}});
  if (adv.epsilon) adv_j["epsilon"] = *adv.epsilon;
  json distill_j = train_to_json(distill.train);
  distill_j.update(json{{"temperature", distill.temperature},
                        {"alpha", distill.alpha},
                        {"literal_alg1", distill.literal_alg1},
                        {"t_squared", distill.t_squared}});
  json student_j = train_to_json(student_train);
  student_j.update(json{{"arch", student_arch}, {"dropout", student_dropout}});
  json teacher_j = train_to_json(teacher_train);
  teacher_j.update(json{{"arch", teacher_arch}, {"dropout", teacher_dropout}});
  json dataset_j{{"train_fraction", train_fraction}};
  if (dataset_path) {
    dataset_j["path"] = std::filesystem::path(*dataset_path).filename().string();
  } else {
    dataset_j.update(json::parse(gen.canonical_json()));
  }
  json eval_j = json::parse(eval.to_json());
  eval_j["models"] = eval_models;
  return json{{"seed", seed},       {"stages", stages},     {"dataset", dataset_j}, {"student", student_j},
              {"teacher", teacher_j}, {"distill", distill_j}, {"prune", prune_j},     {"advtrain", adv_j},
              {"eval", eval_j}};
}

ArchConfig arch_for(const std::string& preset, std::size_t k, std::size_t length, double dropout) {
  if (preset == "desk-student") return desk_student(k, length, dropout);
  if (preset == "desk-teacher") return desk_teacher(k, length, dropout);
  return arch_preset(preset, k, length);
}

template <typename F>
void stage(const std::string& name, F&& body) {
  try {
    body();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

json parse_config(const std::string& config_json) {
  try {
    return json::parse(config_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pipeline config is not valid JSON: ") + e.what());
  }
}

}  // namespace

AdvTrainConfig pipeline_advtrain_config(const std::string& config_json, std::optional<std::uint64_t> seed) {
  return parse_plan(parse_config(config_json), seed).adv;
}

EvalReport run_pipeline(const std::string& config_json, const std::string& out_dir,
                        std::optional<std::uint64_t> seed) {
  Plan plan = parse_plan(parse_config(config_json), seed);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  EvalReport report;
  report.config_json = plan.echo().dump();
  auto persist = [&](const Model& m, const std::string& name) {
    const auto bytes = encode_checkpoint(m);
    write_file((dir / name).string(), bytes);
    report.artifacts.push_back({name, "checkpoint", sha256_hex(bytes)});
  };

  Dataset data;
  SplitResult halves;
  stage("dataset", [&] {
    data = plan.dataset_path ? load_dataset(*plan.dataset_path) : generate_dataset(plan.gen);
    const auto bytes = encode_dataset(data);
    write_file((dir / "dataset.iqds").string(), bytes);
    report.artifacts.push_back({"dataset.iqds", "dataset", sha256_hex(bytes)});
    halves = split(data, {plan.train_fraction, derive_seed(plan.seed, "split"), true});
  });
  const std::size_t k = data.num_classes();
  const std::size_t n = data.length;

  std::vector<std::pair<std::string, Model>> models;
  if (plan.has("train")) {
    stage("train", [&] {
      Model m = Model::build(arch_for(plan.student_arch, k, n, plan.student_dropout), derive_seed(plan.seed, "student-init"));
      train_standard(m, halves.train, plan.student_train);
      persist(m, "standard.amcm");
      models.emplace_back("standard", std::move(m));
    });
  }
  std::optional<Model> teacher;
  if (plan.has("teacher")) {
    stage("teacher", [&] {
      Model m = Model::build(arch_for(plan.teacher_arch, k, n, plan.teacher_dropout), derive_seed(plan.seed, "teacher-init"));
      train_standard(m, halves.train, plan.teacher_train);
      m.meta().provenance = "teacher";
      persist(m, "teacher.amcm");
      teacher = std::move(m);
    });
  }
  if (plan.has("distill")) {
    stage("distill", [&] {
      Model m = Model::build(arch_for(plan.student_arch, k, n, plan.student_dropout), derive_seed(plan.seed, "student-init"));
      distill(*teacher, m, halves.train, plan.distill);
      persist(m, "distilled.amcm");
      models.emplace_back("distilled", std::move(m));
    });
  }
  if (plan.has("prune")) {
    stage("prune", [&] {
      Model m;
      for (const auto& [tag, model] : models)
        if (tag == "distilled") m = model;
      prune_model(m, halves.train, plan.prune);
      persist(m, "distill-pruned.amcm");
      models.emplace_back("distill-pruned", std::move(m));
    });
  }
  if (plan.has("advtrain")) {
    stage("advtrain", [&] {
      const std::size_t base_count = models.size();
      for (std::size_t i = 0; i < base_count; ++i) {
        Model m = models[i].second;
        adversarial_train(m, halves.train, plan.adv);
        const std::string tag = models[i].first + "-adv";
        persist(m, tag + ".amcm");
        models.emplace_back(tag, std::move(m));
      }
    });
  }
  if (plan.has("eval")) {
    stage("eval", [&] {
      std::vector<TaggedModel> tagged;
      if (teacher && std::find(plan.eval_models.begin(), plan.eval_models.end(), "teacher") != plan.eval_models.end())
        tagged.push_back({"teacher", &*teacher});
      for (const auto& [tag, model] : models) {
        if (plan.eval_models.empty() ||
            std::find(plan.eval_models.begin(), plan.eval_models.end(), tag) != plan.eval_models.end())
          tagged.push_back({tag, &model});
      }
      EvalReport eval = compare_report(tagged, halves.test, plan.eval);
      report.models = std::move(eval.models);
      report.curves = std::move(eval.curves);
      report.at_pairs = std::move(eval.at_pairs);
    });
  }
  export_report(report, "json", (dir / "report.json").string());
  return report;
}

}  // namespace amc
