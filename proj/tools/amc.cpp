// amc: command-line front end for dataset generation, training, compression,
// attacks, adversarial training and robustness evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "amc/advtrain.hpp"
#include "amc/attack.hpp"
#include "amc/distill.hpp"
#include "amc/error.hpp"
#include "amc/harness.hpp"
#include "amc/prune.hpp"
#include "amc/util.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out_dir;

  std::string out_path(const std::string& p) const {
    if (out_dir.empty() || fs::path(p).is_absolute()) return p;
    fs::create_directories(out_dir);
    return (fs::path(out_dir) / p).string();
  }
};

std::string slurp(const std::string& path) {
  const auto bytes = amc::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

amc::ArchConfig resolve_arch(const std::string& name, std::size_t k, std::size_t n, double dropout) {
  if (fs::exists(name)) return amc::arch_from_json(slurp(name));
  if (name == "desk-student") return amc::desk_student(k, n, dropout);
  if (name == "desk-teacher") return amc::desk_teacher(k, n, dropout);
  return amc::arch_preset(name, k, n);
}

struct TrainFlags {
  int epochs = 12;
  std::size_t batch = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double lr_decay = 0.85;
  std::string optimizer = "sgd";

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs)->capture_default_str();
    app->add_option("--batch", batch)->capture_default_str();
    app->add_option("--lr", lr)->capture_default_str();
    app->add_option("--momentum", momentum)->capture_default_str();
    app->add_option("--lr-decay", lr_decay)->capture_default_str();
    app->add_option("--optimizer", optimizer)->check(CLI::IsMember({"sgd", "adam"}))->capture_default_str();
  }
  amc::TrainConfig make(std::uint64_t seed) const {
    amc::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.optimizer.method = optimizer == "adam" ? amc::OptimizerMethod::kAdam : amc::OptimizerMethod::kSgd;
    t.optimizer.learning_rate = lr;
    t.optimizer.momentum = momentum;
    t.lr_decay = lr_decay;
    t.seed = seed;
    return t;
  }
};

void print_history(const amc::TrainHistory& h) {
  std::cout << json{{"initial_loss", h.initial_loss}, {"final_loss", h.final_loss}, {"epoch_loss", h.epoch_loss}}.dump()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Tape buffers are freed and reallocated every batch; keep them mapped.
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
#endif
  CLI::App app{"Modulation classifier compression and adversarial robustness toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Root seed")->capture_default_str();
  app.add_option("--config", g.config, "JSON config file (pipeline, eval)");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs given as relative paths");

  // dataset
  auto* ds = app.add_subcommand("dataset", "Generate, inspect or split datasets");
  ds->require_subcommand(1);
  ds->fallthrough();
  auto* gen = ds->add_subcommand("gen", "Generate a synthetic dataset");
  std::string classes = "BPSK,QPSK,8PSK,QAM16", gen_out;
  double snr_min = 10, snr_max = 10, snr_step = 2;
  std::size_t per_cell = 2000, length = 128;
  bool no_normalize = false;
  gen->add_option("--classes", classes)->capture_default_str();
  gen->add_option("--snr-min", snr_min)->capture_default_str();
  gen->add_option("--snr-max", snr_max)->capture_default_str();
  gen->add_option("--snr-step", snr_step)->capture_default_str();
  gen->add_option("--per-cell", per_cell)->capture_default_str();
  gen->add_option("--length", length)->capture_default_str();
  gen->add_flag("--no-normalize", no_normalize, "Keep raw frame power");
  gen->add_option("--out", gen_out)->required();
  auto* info = ds->add_subcommand("info", "Summarize a dataset file");
  std::string info_path;
  info->add_option("path", info_path)->required();
  auto* dsplit = ds->add_subcommand("split", "Stratified train/test split");
  std::string split_in, split_train, split_test;
  double fraction = 0.5;
  dsplit->add_option("path", split_in)->required();
  dsplit->add_option("--fraction", fraction)->capture_default_str();
  dsplit->add_option("--train-out", split_train)->required();
  dsplit->add_option("--test-out", split_test)->required();

  // train
  auto* train = app.add_subcommand("train", "Train a classifier with cross-entropy");
  std::string train_arch = "desk-student", train_data, train_out;
  double train_dropout = 0.0;
  TrainFlags train_flags;
  train->add_option("--arch", train_arch, "Preset name or arch JSON file")->capture_default_str();
  train->add_option("--data", train_data)->required();
  train->add_option("--dropout", train_dropout)->capture_default_str();
  train_flags.add(train);
  train->add_option("--out", train_out)->required();

  // distill
  auto* dist = app.add_subcommand("distill", "Distill a teacher into a student");
  std::string teacher_path, student_arch = "desk-student", dist_data, dist_out;
  amc::DistillConfig dcfg;
  TrainFlags dist_flags;
  dist->add_option("--teacher", teacher_path)->required();
  dist->add_option("--student-arch", student_arch)->capture_default_str();
  dist->add_option("--data", dist_data)->required();
  dist->add_option("--T", dcfg.temperature)->capture_default_str();
  dist->add_option("--alpha", dcfg.alpha)->capture_default_str();
  dist->add_flag("--literal-alg1", dcfg.literal_alg1, "Softened probabilities in the CE term");
  dist->add_flag("--t-squared", dcfg.t_squared, "Scale the KL term by T^2");
  dist_flags.add(dist);
  dist->add_option("--out", dist_out)->required();

  // prune
  auto* prune = app.add_subcommand("prune", "Net-Trim a dense layer");
  std::string prune_model_path, prune_data, prune_out;
  amc::PruneConfig pcfg;
  prune->add_option("--model", prune_model_path)->required();
  prune->add_option("--data", prune_data)->required();
  prune->add_option("--layer", pcfg.layer)->capture_default_str();
  prune->add_option("--eta", pcfg.eta)->capture_default_str();
  prune->add_flag("--eta-relative", pcfg.eta_relative, "eta is a fraction of ||Y||_F");
  prune->add_option("--probe", pcfg.probe_size)->capture_default_str();
  prune->add_option("--rho", pcfg.admm.rho)->capture_default_str();
  prune->add_option("--max-iters", pcfg.admm.max_iters)->capture_default_str();
  prune->add_option("--out", prune_out)->required();

  // attack
  auto* attack = app.add_subcommand("attack", "Craft adversarial frames");
  std::string atk_model, atk_data, atk_out, atk_kind = "pgd";
  std::optional<double> atk_pnr, atk_snr;
  amc::AttackConfig acfg;
  attack->add_option("--model", atk_model)->required();
  attack->add_option("--data", atk_data)->required();
  attack->add_option("--kind", atk_kind)->capture_default_str();
  attack->add_option("--pnr-db", atk_pnr, "Budget from PNR (per-frame power)");
  attack->add_option("--epsilon", acfg.epsilon, "Fixed budget in the attack's norm");
  attack->add_option("--snr-db", atk_snr, "Only attack frames tagged with this SNR");
  attack->add_option("--iters", acfg.pgd_iters)->capture_default_str();
  attack->add_option("--beta-frac", acfg.beta_frac)->capture_default_str();
  attack->add_option("--overshoot", acfg.overshoot)->capture_default_str();
  attack->add_option("--max-iters", acfg.deepfool_iters)->capture_default_str();
  attack->add_option("--probe", acfg.uap_probe)->capture_default_str();
  attack->add_option("--out", atk_out)->required();

  // advtrain
  auto* adv = app.add_subcommand("advtrain", "Adversarially fine-tune a model");
  std::string adv_model, adv_data, adv_out, mix = "0.25,0.25", freeze = "fc1";
  amc::AdvTrainConfig vcfg;
  TrainFlags adv_flags;
  adv_flags.epochs = 10;
  adv_flags.lr = 0.02;
  adv_flags.lr_decay = 0.9;
  adv->add_option("--model", adv_model)->required();
  adv->add_option("--data", adv_data)->required();
  adv->add_option("--pgd-iters", vcfg.pgd_iters)->capture_default_str();
  adv->add_option("--mix", mix, "PGD,FGSM batch fractions")->capture_default_str();
  adv->add_option("--freeze", freeze, "Comma-separated frozen groups; empty for none")->capture_default_str();
  adv->add_option("--pnr-db", vcfg.pnr_db)->capture_default_str();
  adv->add_option("--ref-snr-db", vcfg.ref_snr_db)->capture_default_str();
  adv->add_flag("--precompute", vcfg.precompute, "Craft adversarial frames once up front");
  adv_flags.add(adv);
  adv->add_option("--out", adv_out)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Accuracy-vs-PNR curves for tagged checkpoints");
  std::vector<std::string> eval_models;
  std::string eval_data, eval_out, eval_format = "json", eval_attacks = "fgm,fgsm,pgd,deepfool,uap";
  eval->add_option("--model", eval_models, "tag=checkpoint, repeatable")->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--attacks", eval_attacks)->capture_default_str();
  eval->add_option("--format", eval_format)->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  eval->add_option("--out", eval_out)->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run the configured stages end to end");
  bool seed_given = false;

  CLI11_PARSE(app, argc, argv);
  seed_given = app.get_option("--seed")->count() > 0;

  try {
    if (!g.config.empty() && !pipe->parsed() && !eval->parsed())
      throw amc::ConfigError("--config applies to the pipeline and eval commands");

    if (gen->parsed()) {
      amc::GeneratorConfig c;
      c.classes = split_list(classes);
      c.snr_grid_db = amc::snr_grid(snr_min, snr_max, snr_step);
      c.frames_per_cell = per_cell;
      c.length = length;
      c.normalize = !no_normalize;
      c.seed = amc::derive_seed(g.seed, "dataset");
      const auto d = amc::generate_dataset(c);
      amc::save_dataset(d, g.out_path(gen_out));
      std::cout << "wrote " << d.size() << " frames, sha256 " << d.content_hash() << "\n";
    } else if (info->parsed()) {
      const auto d = amc::load_dataset(info_path);
      std::map<std::string, std::size_t> per_class;
      std::map<double, std::size_t> per_snr;
      for (const auto& f : d.frames) {
        ++per_class[d.class_names.at(f.label)];
        ++per_snr[f.snr_db];
      }
      json snr = json::object();
      for (const auto& [s, c] : per_snr) snr[std::to_string(s)] = c;
      std::cout << json{{"frames", d.size()},
                        {"length", d.length},
                        {"classes", d.class_names},
                        {"per_class", per_class},
                        {"per_snr", snr},
                        {"content_hash", d.content_hash()},
                        {"source", d.provenance.source},
                        {"split_id", d.provenance.split_id},
                        {"role", d.provenance.role},
                        {"normalized", d.provenance.normalized}}
                       .dump(2)
                << "\n";
    } else if (dsplit->parsed()) {
      const auto d = amc::load_dataset(split_in);
      const auto halves = amc::split(d, {fraction, amc::derive_seed(g.seed, "split"), true});
      amc::save_dataset(halves.train, g.out_path(split_train));
      amc::save_dataset(halves.test, g.out_path(split_test));
      std::cout << "train " << halves.train.size() << ", test " << halves.test.size() << ", split "
                << halves.train.provenance.split_id << "\n";
    } else if (train->parsed()) {
      const auto d = amc::load_dataset(train_data);
      auto m = amc::Model::build(resolve_arch(train_arch, d.num_classes(), d.length, train_dropout),
                                 amc::derive_seed(g.seed, "student-init"));
      print_history(amc::train_standard(m, d, train_flags.make(amc::derive_seed(g.seed, "train"))));
      amc::save_checkpoint(m, g.out_path(train_out));
    } else if (dist->parsed()) {
      const auto d = amc::load_dataset(dist_data);
      const auto teacher = amc::load_checkpoint(teacher_path, d.num_classes());
      auto m = amc::Model::build(resolve_arch(student_arch, d.num_classes(), d.length, 0.0),
                                 amc::derive_seed(g.seed, "student-init"));
      dcfg.train = dist_flags.make(amc::derive_seed(g.seed, "train"));
      print_history(amc::distill(teacher, m, d, dcfg));
      amc::save_checkpoint(m, g.out_path(dist_out));
    } else if (prune->parsed()) {
      const auto d = amc::load_dataset(prune_data);
      auto m = amc::load_checkpoint(prune_model_path, d.num_classes());
      pcfg.seed = amc::derive_seed(g.seed, "prune");
      const auto result = amc::prune_model(m, d, pcfg);
      amc::save_checkpoint(m, g.out_path(prune_out));
      std::cout << json::parse(amc::prune_report_json(result, pcfg)).dump(2) << "\n";
    } else if (attack->parsed()) {
      auto d = amc::load_dataset(atk_data);
      if (atk_snr) d = amc::filter_snr(d, *atk_snr);
      if (d.frames.empty()) throw amc::ConfigError("no frames to attack");
      const auto m = amc::load_checkpoint(atk_model, d.num_classes());
      amc::check_separation(m, d);
      acfg.kind = amc::parse_attack(atk_kind);
      acfg.pnr_db = atk_pnr;
      acfg.seed = amc::derive_seed(g.seed, "attack");
      const auto batch = amc::make_batch(d);
      std::optional<amc::Batch> probe;
      if (acfg.kind == amc::AttackKind::kUap) {
        const std::size_t per_class = std::max<std::size_t>(1, acfg.uap_probe / d.num_classes());
        probe = amc::make_batch(d, amc::stratified_sample(d, per_class, amc::derive_seed(g.seed, "uap-probe")));
      }
      const auto result = amc::run_attack(m, batch, acfg, probe ? &*probe : nullptr);
      amc::save_adversarial_batch(result, d.class_names, g.out_path(atk_out));
      std::cout << json{{"frames", result.size()}, {"accuracy", result.accuracy()}, {"attack", json::parse(result.provenance)}}
                       .dump(2)
                << "\n";
    } else if (adv->parsed()) {
      const auto d = amc::load_dataset(adv_data);
      auto m = amc::load_checkpoint(adv_model, d.num_classes());
      const auto fr = split_list(mix);
      if (fr.size() != 2) throw amc::ConfigError("--mix needs two fractions: PGD,FGSM");
      vcfg.pgd_fraction = std::stod(fr[0]);
      vcfg.fgsm_fraction = std::stod(fr[1]);
      vcfg.freeze = split_list(freeze);
      vcfg.train = adv_flags.make(amc::derive_seed(g.seed, "advtrain"));
      print_history(amc::adversarial_train(m, d, vcfg));
      amc::save_checkpoint(m, g.out_path(adv_out));
    } else if (eval->parsed()) {
      const auto d = amc::load_dataset(eval_data);
      amc::EvalConfig ecfg;
      json section = json::object();
      if (!g.config.empty()) section = json::parse(slurp(g.config)).value("eval", json::object());
      if (section.contains("pnr_db")) ecfg.pnr_db = section["pnr_db"].get<std::vector<double>>();
      if (section.contains("snr_db")) {
        if (section["snr_db"].is_null()) {
          ecfg.snr_db.reset();
        } else {
          ecfg.snr_db = section["snr_db"].get<double>();
        }
      }
      ecfg.uap_probe = section.value("uap_probe", ecfg.uap_probe);
      ecfg.seed = amc::derive_seed(g.seed, "eval");
      for (const auto& name : section.value("attacks", split_list(eval_attacks))) {
        amc::AttackConfig a;
        a.kind = amc::parse_attack(name);
        a.uap_probe = ecfg.uap_probe;
        ecfg.attacks.push_back(a);
      }
      std::vector<amc::Model> loaded;
      std::vector<std::string> tags;
      loaded.reserve(eval_models.size());
      for (const auto& spec : eval_models) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw amc::ConfigError("--model expects tag=checkpoint, got " + spec);
        tags.push_back(spec.substr(0, eq));
        loaded.push_back(amc::load_checkpoint(spec.substr(eq + 1), d.num_classes()));
      }
      std::vector<amc::TaggedModel> tagged;
      for (std::size_t i = 0; i < loaded.size(); ++i) tagged.push_back({tags[i], &loaded[i]});
      const auto report = amc::compare_report(tagged, d, ecfg);
      amc::export_report(report, eval_format, g.out_path(eval_out));
      for (const auto& m : report.models)
        std::cout << m.tag << " clean " << m.clean_accuracy << " (" << m.n << " frames)\n";
    } else if (pipe->parsed()) {
      if (g.config.empty()) throw amc::ConfigError("pipeline needs --config");
      const std::string out = g.out_dir.empty() ? "." : g.out_dir;
      const auto report = amc::run_pipeline(slurp(g.config), out,
                                            seed_given ? std::optional<std::uint64_t>(g.seed) : std::nullopt);
      for (const auto& a : report.artifacts) std::cout << a.sha256 << "  " << a.name << "\n";
      for (const auto& m : report.models) std::cout << m.tag << " clean " << m.clean_accuracy << "\n";
      std::cout << "report: " << (fs::path(out) / "report.json").string() << "\n";
    }
  } catch (const amc::PipelineError& e) {
    std::cerr << "pipeline failed at " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
