#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "amc/signal.hpp"
#include "amc/tensor.hpp"

namespace amc {

/// Convolution followed by ReLU.
struct ConvLayer {
  std::string name;
  std::size_t filters = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 3;
  Padding padding;
};

/// Parallel convolutions over the same input, concatenated on channels, then ReLU.
struct BranchBlock {
  std::string name;
  std::vector<ConvLayer> branches;
};

/// Fully-connected layer; the input is flattened when it is not already 2-D.
struct DenseLayer {
  std::string name;
  std::size_t units = 1;
  bool relu = true;
};

struct DropoutLayer {
  double rate = 0.5;
};

using LayerSpec = std::variant<ConvLayer, BranchBlock, DenseLayer, DropoutLayer>;

struct ArchConfig {
  std::string name;
  std::string preset;  // "paper", "desk" or "custom"
  std::size_t input_rows = 2;
  std::size_t input_length = 128;
  std::size_t num_classes = 11;
  std::vector<LayerSpec> layers;

  /// Throws ShapeError when layer shapes do not chain or the head is not K wide.
  void validate() const;
  friend bool operator==(const ArchConfig& a, const ArchConfig& b);
};

/// Two-stage CNN: conv(256@1x3) -> conv(80@2x3) -> fc1(256) -> fc2(K), time
/// axis padded by 2 on each side before each conv, dropout 0.5.
ArchConfig paper_student(std::size_t num_classes = 11);
/// conv 16@1x3 -> conv 8@2x3 -> fc1 64 -> fc2 K, "same" padding on time.
ArchConfig desk_student(std::size_t num_classes, std::size_t length = 128, double dropout = 0.0);
/// Two parallel-branch blocks (1x1, 1x3, 2x3) then a dense head.
ArchConfig desk_teacher(std::size_t num_classes, std::size_t length = 128, double dropout = 0.0);
/// Single dense layer over the flattened frame (for analytic tests).
ArchConfig linear_arch(std::size_t num_classes, std::size_t length, std::size_t rows = 2);
/// Preset lookup: "paper-student", "desk-student", "desk-teacher".
ArchConfig arch_preset(const std::string& name, std::size_t num_classes, std::size_t length = 128);

struct LayerCount {
  std::string name;
  std::size_t params = 0;
};

/// Per-group parameter counts derived from the config alone.
std::vector<LayerCount> closed_form_param_counts(const ArchConfig& config);

struct ParamGroup {
  std::string name;
  NdArray weight;
  NdArray bias;
  bool frozen = false;
  /// Non-empty for pruned groups: 0 marks weights pinned at zero.
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return weight.size() + bias.size(); }
};

struct TrainingRecord {
  std::string stage;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::vector<double> loss_curve;
};

/// Everything carried alongside the weights in a checkpoint.
struct ModelMetadata {
  std::string provenance = "untrained";  // standard, teacher, distilled, distill-pruned, *-adv
  std::uint64_t init_seed = 0;
  std::string train_hash;  // content hash of the training set
  std::string split_id;
  std::vector<TrainingRecord> history;
  std::string prune_json;  // JSON report of the pruning step, when pruned
  std::string notes_json;  // stage configs echoed for reproducibility
};

struct ForwardOptions {
  bool training = false;  // dropout on
  std::mt19937_64* rng = nullptr;
  bool param_grads = false;  // bind trainable parameters as tape variables
};

struct LayerTap {
  Var input;
  Var output;
};

struct ForwardResult {
  Var logits;
  /// Parameter bindings in group order: weight and bias Vars.
  std::vector<std::pair<Var, Var>> params;
  /// Input and post-activation output of each named layer.
  std::map<std::string, LayerTap> taps;
};

class Model {
 public:
  Model() = default;
  /// Deterministic Glorot-uniform init; parameters rounded to float32.
  static Model build(const ArchConfig& config, std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  ParamGroup& group(const std::string& name);
  const ParamGroup& group(const std::string& name) const;
  bool has_group(const std::string& name) const;
  void set_frozen(const std::string& name, bool frozen);

  ModelMetadata& meta() { return meta_; }
  const ModelMetadata& meta() const { return meta_; }

  /// Records the forward pass on `tape`. `input` is [N, 1, rows, n].
  ForwardResult forward(Tape& tape, Var input, const ForwardOptions& options) const;
  /// Evaluation-mode logits [N, K].
  NdArray logits(const NdArray& input) const;

  std::size_t num_classes() const { return arch_.num_classes; }
  Shape input_shape(std::size_t batch) const { return {batch, 1, arch_.input_rows, arch_.input_length}; }

 private:
  friend Model decode_checkpoint(std::span<const std::uint8_t> bytes);
  ArchConfig arch_;
  std::vector<ParamGroup> groups_;
  ModelMetadata meta_;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::vector<LayerCount> per_layer;
};

ParamCounts count_params(const Model& model);

/// A batch of frames as [N, 1, 2, n] plus labels and SNR tags.
struct Batch {
  NdArray x;
  std::vector<int> labels;
  std::vector<double> snr_db;
  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& dataset);
/// Rows [begin, end) of a batch.
Batch slice(const Batch& batch, std::size_t begin, std::size_t end);

/// argmax over each row, ties to the lowest index.
std::vector<int> argmax_rows(const NdArray& scores);
int argmax(std::span<const double> scores);
std::vector<int> predict_labels(const Model& model, const NdArray& x);
int predict_label(const Model& model, const IqFrame& frame);
/// Per-frame cross-entropy of softmax(logits) against labels.
std::vector<double> per_frame_loss(const Model& model, const NdArray& x, std::span<const int> labels);

struct AccuracyReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  struct Bucket {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  };
  std::map<double, Bucket> per_snr;
};

AccuracyReport accuracy_report(const Model& model, const Dataset& dataset);
double accuracy(const Model& model, const Dataset& dataset);

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerMethod::kSgd, 0.05, 0.9};
  /// Multiplies the learning rate after every epoch.
  double lr_decay = 1.0;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

/// Builds the scalar loss for one batch from the recorded forward pass.
using LossFn = std::function<Var(Tape&, const ForwardResult&, const Batch&)>;
/// Rewrites a batch before the forward pass (adversarial augmentation).
/// `indices` are the dataset positions of the batch rows.
using BatchHook = std::function<void(const Model&, Batch&, std::span<const std::size_t> indices, int epoch,
                                     std::size_t batch_index)>;

/// Shuffled mini-batch loop shared by standard, distillation and adversarial
/// training. Throws DivergenceError on a non-finite loss or when the hook
/// raises a NumericError.
std::vector<double> fit(Model& model, const Dataset& train, const TrainConfig& config, const LossFn& loss,
                        const BatchHook& hook = nullptr);

/// Mean cross-entropy over a dataset in evaluation mode.
double mean_loss(const Model& model, const Dataset& dataset);

/// Cross-entropy training; records history and tags provenance "standard".
TrainHistory train_standard(Model& model, const Dataset& train, const TrainConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);
/// Optional expectations are checked before any model is returned.
Model load_checkpoint(const std::string& path, std::optional<std::size_t> expected_classes = std::nullopt);

/// Canonical JSON text for an architecture.
std::string arch_to_json(const ArchConfig& config);
ArchConfig arch_from_json(const std::string& text);

}  // namespace amc
