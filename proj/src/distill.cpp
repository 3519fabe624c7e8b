#include "amc/distill.hpp"

#include <cmath>

#include "amc/error.hpp"

namespace amc {

void DistillConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
}

NdArray teacher_probabilities(const Model& teacher, const NdArray& x, double temperature) {
  Tape tape;
  return tape.value(tape.softmax(tape.constant(teacher.logits(x)), temperature));
}

Var distill_loss(Tape& tape, Var student_logits, const NdArray& teacher_probs, std::span<const int> labels,
                 const DistillConfig& config, DistillLossParts* parts) {
  const double t = config.temperature;
  Var soft = tape.softmax(student_logits, t);
  Var kd = tape.kl_divergence(tape.constant(teacher_probs), soft);
  if (config.t_squared) kd = tape.scale(kd, t * t);
  Var hard = config.literal_alg1 ? soft : tape.softmax(student_logits, 1.0);
  Var ce = tape.cross_entropy(hard, labels);
  Var total = tape.add(tape.scale(kd, config.alpha), tape.scale(ce, 1.0 - config.alpha));
  if (parts) *parts = {tape.value(kd)[0], tape.value(ce)[0], tape.value(total)[0]};
  return total;
}

TrainHistory distill(const Model& teacher, Model& student, const Dataset& train, const DistillConfig& config) {
  config.validate();
  if (teacher.num_classes() != student.num_classes()) {
    throw ConfigError("teacher has " + std::to_string(teacher.num_classes()) + " classes, student has " +
                      std::to_string(student.num_classes()));
  }
  if (teacher.input_shape(1) != student.input_shape(1)) throw ShapeError("teacher and student input shapes differ");

  TrainHistory h;
  h.initial_loss = mean_loss(student, train);
  h.epoch_loss = fit(student, train, config.train, [&](Tape& tape, const ForwardResult& fr, const Batch& b) {
    return distill_loss(tape, fr.logits, teacher_probabilities(teacher, b.x, config.temperature), b.labels, config);
  });
  h.final_loss = config.train.epochs > 0 ? mean_loss(student, train) : h.initial_loss;
  if (config.train.epochs > 0) {
    auto& meta = student.meta();
    meta.provenance = "distilled";
    meta.train_hash = train.content_hash();
    meta.split_id = train.provenance.split_id;
    meta.history.push_back({"distill", config.train.seed, config.train.epochs, h.epoch_loss});
  }
  return h;
}

}  // namespace amc
