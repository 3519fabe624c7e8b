#pragma once

#include "amc/model.hpp"

namespace amc {

struct DistillConfig {
  double temperature = 10.0;
  /// Weight of the teacher-matching term; 1 - alpha weights the label term.
  double alpha = 0.1;
  /// Feed temperature-softened student probabilities into the label term too.
  bool literal_alg1 = false;
  /// Multiply the teacher-matching term by T^2.
  bool t_squared = false;
  TrainConfig train;

  void validate() const;
};

struct DistillLossParts {
  double kd = 0.0;  // KL(teacher_T || student_T)
  double ce = 0.0;  // cross-entropy of the student against labels
  double total = 0.0;
};

/// Records the weighted loss on `tape`. `teacher_probs` is [N, K] at temperature T.
Var distill_loss(Tape& tape, Var student_logits, const NdArray& teacher_probs, std::span<const int> labels,
                 const DistillConfig& config, DistillLossParts* parts = nullptr);

/// Teacher probabilities softmax(logits / T) in evaluation mode.
NdArray teacher_probabilities(const Model& teacher, const NdArray& x, double temperature);

/// Trains `student` against the teacher's softened outputs and the labels.
/// The teacher is only read. Tags the student "distilled".
TrainHistory distill(const Model& teacher, Model& student, const Dataset& train, const DistillConfig& config);

}  // namespace amc
