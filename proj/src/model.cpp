#include "amc/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "amc/error.hpp"
#include "amc/util.hpp"

namespace amc {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'A', 'M', 'C', 'M'};
constexpr std::size_t kEvalChunk = 256;

struct FeatureShape {
  bool flat = false;
  std::size_t c = 0, h = 0, w = 0;
  std::size_t features() const { return flat ? c : c * h * w; }
};

struct GroupShape {
  std::string name;
  Shape weight;
  Shape bias;
};

FeatureShape conv_out(const ConvLayer& l, const FeatureShape& in) {
  if (in.flat) throw ShapeError("conv layer " + l.name + " follows a dense layer");
  if (l.filters == 0 || l.kernel_h == 0 || l.kernel_w == 0) throw ShapeError("conv layer " + l.name + " has a zero dimension");
  const std::size_t ph = in.h + l.padding.top + l.padding.bottom;
  const std::size_t pw = in.w + l.padding.left + l.padding.right;
  if (ph < l.kernel_h || pw < l.kernel_w) throw ShapeError("conv layer " + l.name + " kernel exceeds padded input");
  return {false, l.filters, ph - l.kernel_h + 1, pw - l.kernel_w + 1};
}

// Walks the layer list, returning parameter group shapes in binding order.
std::vector<GroupShape> infer_groups(const ArchConfig& a) {
  if (a.input_rows == 0 || a.input_length == 0) throw ShapeError("input shape must be positive");
  if (a.num_classes < 2) throw ShapeError("at least two output classes are required");
  if (a.layers.empty()) throw ShapeError("architecture has no layers");
  FeatureShape s{false, 1, a.input_rows, a.input_length};
  std::vector<GroupShape> out;
  for (const auto& layer : a.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      out.push_back({c->name, {c->filters, s.c, c->kernel_h, c->kernel_w}, {c->filters}});
      s = conv_out(*c, s);
    } else if (const auto* b = std::get_if<BranchBlock>(&layer)) {
      if (b->branches.empty()) throw ShapeError("branch block " + b->name + " has no branches");
      FeatureShape merged{};
      for (const auto& br : b->branches) {
        const FeatureShape o = conv_out(br, s);
        if (merged.c == 0) {
          merged = o;
        } else {
          if (o.h != merged.h || o.w != merged.w) throw ShapeError("branch outputs of " + b->name + " differ in size");
          merged.c += o.c;
        }
        out.push_back({b->name + "/" + br.name, {br.filters, s.c, br.kernel_h, br.kernel_w}, {br.filters}});
      }
      s = merged;
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      if (d->units == 0) throw ShapeError("dense layer " + d->name + " has zero units");
      out.push_back({d->name, {s.features(), d->units}, {d->units}});
      s = {true, d->units, 1, 1};
    } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
      if (dr->rate < 0.0 || dr->rate >= 1.0) throw ShapeError("dropout rate must be in [0, 1)");
    }
  }
  const auto* head = std::get_if<DenseLayer>(&a.layers.back());
  if (!head) throw ShapeError("last layer must be a dense classification head");
  if (head->units != a.num_classes) throw ShapeError("head width does not equal the number of classes");
  if (head->relu) throw ShapeError("classification head must not apply ReLU");
  std::vector<std::string> names;
  for (const auto& g : out) names.push_back(g.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) throw ShapeError("duplicate layer name");
  return out;
}

double uniform_pm1(std::mt19937_64& rng) { return 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0; }

json padding_json(const Padding& p) { return json::array({p.top, p.bottom, p.left, p.right}); }

json conv_json(const ConvLayer& c) {
  return json{{"type", "conv"},
              {"name", c.name},
              {"filters", c.filters},
              {"kernel", json::array({c.kernel_h, c.kernel_w})},
              {"padding", padding_json(c.padding)}};
}

ConvLayer conv_from(const json& j) {
  ConvLayer c;
  c.name = j.at("name").get<std::string>();
  c.filters = j.at("filters").get<std::size_t>();
  c.kernel_h = j.at("kernel").at(0).get<std::size_t>();
  c.kernel_w = j.at("kernel").at(1).get<std::size_t>();
  const auto& p = j.at("padding");
  c.padding = {p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>(), p.at(2).get<std::size_t>(),
               p.at(3).get<std::size_t>()};
  return c;
}

json arch_json(const ArchConfig& a) {
  json layers = json::array();
  for (const auto& layer : a.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      layers.push_back(conv_json(*c));
    } else if (const auto* b = std::get_if<BranchBlock>(&layer)) {
      json br = json::array();
      for (const auto& x : b->branches) br.push_back(conv_json(x));
      layers.push_back(json{{"type", "branch"}, {"name", b->name}, {"branches", br}});
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      layers.push_back(json{{"type", "dense"}, {"name", d->name}, {"units", d->units}, {"relu", d->relu}});
    } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
      layers.push_back(json{{"type", "dropout"}, {"rate", dr->rate}});
    }
  }
  return json{{"name", a.name},
              {"preset", a.preset},
              {"input_rows", a.input_rows},
              {"input_length", a.input_length},
              {"num_classes", a.num_classes},
              {"layers", layers}};
}

ArchConfig arch_from(const json& j) {
  ArchConfig a;
  a.name = j.at("name").get<std::string>();
  a.preset = j.value("preset", "custom");
  a.input_rows = j.at("input_rows").get<std::size_t>();
  a.input_length = j.at("input_length").get<std::size_t>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "conv") {
      a.layers.emplace_back(conv_from(l));
    } else if (type == "branch") {
      BranchBlock b;
      b.name = l.at("name").get<std::string>();
      for (const auto& x : l.at("branches")) b.branches.push_back(conv_from(x));
      a.layers.emplace_back(std::move(b));
    } else if (type == "dense") {
      a.layers.emplace_back(DenseLayer{l.at("name").get<std::string>(), l.at("units").get<std::size_t>(),
                                       l.at("relu").get<bool>()});
    } else if (type == "dropout") {
      a.layers.emplace_back(DropoutLayer{l.at("rate").get<double>()});
    } else {
      throw FormatError("unknown layer type: " + type);
    }
  }
  return a;
}

json meta_json(const ModelMetadata& m) {
  json hist = json::array();
  for (const auto& h : m.history)
    hist.push_back(json{{"stage", h.stage}, {"seed", h.seed}, {"epochs", h.epochs}, {"loss_curve", h.loss_curve}});
  json j{{"provenance", m.provenance}, {"init_seed", m.init_seed}, {"train_hash", m.train_hash},
         {"split_id", m.split_id},     {"history", hist}};
  if (!m.prune_json.empty()) j["prune"] = json::parse(m.prune_json);
  if (!m.notes_json.empty()) j["notes"] = json::parse(m.notes_json);
  return j;
}

ModelMetadata meta_from(const json& j) {
  ModelMetadata m;
  m.provenance = j.value("provenance", "");
  m.init_seed = j.value("init_seed", std::uint64_t{0});
  m.train_hash = j.value("train_hash", "");
  m.split_id = j.value("split_id", "");
  for (const auto& h : j.value("history", json::array())) {
    m.history.push_back({h.at("stage").get<std::string>(), h.at("seed").get<std::uint64_t>(), h.at("epochs").get<int>(),
                         h.at("loss_curve").get<std::vector<double>>()});
  }
  if (j.contains("prune")) m.prune_json = j["prune"].dump();
  if (j.contains("notes")) m.notes_json = j["notes"].dump();
  return m;
}

void write_array(ByteWriter& w, const NdArray& a) {
  ByteWriter payload;
  for (double v : a.data()) payload.f32(static_cast<float>(v));
  w.u64(a.size());
  w.raw(payload.bytes());
  w.u64(fnv1a64(payload.bytes()));
}

void read_array(ByteReader& r, NdArray& a, const std::string& what) {
  const std::uint64_t count = r.u64();
  if (count != a.size()) {
    throw FormatError("checkpoint: payload length of " + what + " is " + std::to_string(count) + ", expected " +
                      std::to_string(a.size()));
  }
  const auto bytes = r.raw(count * 4);
  const std::uint64_t sum = r.u64();
  if (sum != fnv1a64(bytes)) throw FormatError("checkpoint: checksum mismatch in " + what);
  ByteReader pr(bytes);
  for (auto& v : a.data()) {
    const float f = pr.f32();
    if (!std::isfinite(f)) throw FormatError("checkpoint: non-finite value in " + what);
    v = f;
  }
}

std::vector<ParamGroup> allocate_groups(const ArchConfig& a) {
  std::vector<ParamGroup> groups;
  for (auto& g : infer_groups(a)) {
    ParamGroup p;
    p.name = g.name;
    p.weight = NdArray(g.weight, 0.0);
    p.bias = NdArray(g.bias, 0.0);
    groups.push_back(std::move(p));
  }
  return groups;
}

}  // namespace

bool operator==(const ArchConfig& a, const ArchConfig& b) { return arch_json(a) == arch_json(b); }

void ArchConfig::validate() const { infer_groups(*this); }

std::string arch_to_json(const ArchConfig& config) { return arch_json(config).dump(); }

ArchConfig arch_from_json(const std::string& text) {
  try {
    return arch_from(json::parse(text));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad architecture JSON: ") + e.what());
  }
}

ArchConfig paper_student(std::size_t num_classes) {
  ArchConfig a;
  a.name = "vtcnn2";
  a.preset = "paper";
  a.num_classes = num_classes;
  const Padding pad{0, 0, 2, 2};
  a.layers = {ConvLayer{"conv1", 256, 1, 3, pad}, DropoutLayer{0.5}, ConvLayer{"conv2", 80, 2, 3, pad},
              DropoutLayer{0.5}, DenseLayer{"fc1", 256, true}, DropoutLayer{0.5}, DenseLayer{"fc2", num_classes, false}};
  return a;
}

ArchConfig desk_student(std::size_t num_classes, std::size_t length, double dropout) {
  ArchConfig a;
  a.name = "desk-student";
  a.preset = "desk";
  a.num_classes = num_classes;
  a.input_length = length;
  a.layers.emplace_back(ConvLayer{"conv1", 16, 1, 3, Padding::same_time(3)});
  a.layers.emplace_back(ConvLayer{"conv2", 8, 2, 3, Padding::same_time(3)});
  if (dropout > 0.0) a.layers.emplace_back(DropoutLayer{dropout});
  a.layers.emplace_back(DenseLayer{"fc1", 64, true});
  if (dropout > 0.0) a.layers.emplace_back(DropoutLayer{dropout});
  a.layers.emplace_back(DenseLayer{"fc2", num_classes, false});
  return a;
}

ArchConfig desk_teacher(std::size_t num_classes, std::size_t length, double dropout) {
  ArchConfig a;
  a.name = "desk-teacher";
  a.preset = "desk";
  a.num_classes = num_classes;
  a.input_length = length;
  a.layers.emplace_back(BranchBlock{"inc1",
                                    {ConvLayer{"b1x1", 8, 1, 1, Padding{}},
                                     ConvLayer{"b1x3", 8, 1, 3, Padding::same_time(3)},
                                     ConvLayer{"b2x3", 8, 2, 3, Padding::same(2, 3)}}});
  a.layers.emplace_back(BranchBlock{"inc2",
                                    {ConvLayer{"b1x1", 4, 1, 1, Padding{}},
                                     ConvLayer{"b1x3", 4, 1, 3, Padding::same_time(3)},
                                     ConvLayer{"b2x3", 4, 2, 3, Padding::same(2, 3)}}});
  if (dropout > 0.0) a.layers.emplace_back(DropoutLayer{dropout});
  a.layers.emplace_back(DenseLayer{"fc1", 80, true});
  if (dropout > 0.0) a.layers.emplace_back(DropoutLayer{dropout});
  a.layers.emplace_back(DenseLayer{"fc2", num_classes, false});
  return a;
}

ArchConfig linear_arch(std::size_t num_classes, std::size_t length, std::size_t rows) {
  ArchConfig a;
  a.name = "linear";
  a.preset = "custom";
  a.num_classes = num_classes;
  a.input_rows = rows;
  a.input_length = length;
  a.layers = {DenseLayer{"fc1", num_classes, false}};
  return a;
}

ArchConfig arch_preset(const std::string& name, std::size_t num_classes, std::size_t length) {
  if (name == "paper-student") return paper_student(num_classes);
  if (name == "desk-student") return desk_student(num_classes, length);
  if (name == "desk-teacher") return desk_teacher(num_classes, length);
  throw ConfigError("unknown architecture preset: " + name);
}

std::vector<LayerCount> closed_form_param_counts(const ArchConfig& config) {
  std::vector<LayerCount> out;
  std::size_t c = 1, h = config.input_rows, w = config.input_length;
  std::size_t flat = 0;
  auto conv_count = [&](const ConvLayer& l, std::size_t in_c) { return l.filters * (in_c * l.kernel_h * l.kernel_w + 1); };
  for (const auto& layer : config.layers) {
    if (const auto* cl = std::get_if<ConvLayer>(&layer)) {
      out.push_back({cl->name, conv_count(*cl, c)});
      h = h + cl->padding.top + cl->padding.bottom - cl->kernel_h + 1;
      w = w + cl->padding.left + cl->padding.right - cl->kernel_w + 1;
      c = cl->filters;
    } else if (const auto* b = std::get_if<BranchBlock>(&layer)) {
      std::size_t total_c = 0;
      for (const auto& br : b->branches) {
        out.push_back({b->name + "/" + br.name, conv_count(br, c)});
        total_c += br.filters;
      }
      const auto& f = b->branches.front();
      h = h + f.padding.top + f.padding.bottom - f.kernel_h + 1;
      w = w + f.padding.left + f.padding.right - f.kernel_w + 1;
      c = total_c;
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const std::size_t in = flat ? flat : c * h * w;
      out.push_back({d->name, (in + 1) * d->units});
      flat = d->units;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Model Model::build(const ArchConfig& config, std::uint64_t seed) {
  Model m;
  m.arch_ = config;
  m.groups_ = allocate_groups(config);
  for (std::size_t gi = 0; gi < m.groups_.size(); ++gi) {
    ParamGroup& g = m.groups_[gi];
    std::size_t fan_in, fan_out;
    if (g.weight.rank() == 4) {
      const std::size_t rf = g.weight.dim(2) * g.weight.dim(3);
      fan_in = g.weight.dim(1) * rf;
      fan_out = g.weight.dim(0) * rf;
    } else {
      fan_in = g.weight.dim(0);
      fan_out = g.weight.dim(1);
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::mt19937_64 rng(derive_seed(seed, "init/" + g.name, gi));
    for (auto& v : g.weight.data()) v = static_cast<double>(static_cast<float>(limit * uniform_pm1(rng)));
  }
  m.meta_.init_seed = seed;
  return m;
}

ParamGroup& Model::group(const std::string& name) {
  for (auto& g : groups_)
    if (g.name == name) return g;
  throw ConfigError("no parameter group named " + name);
}

const ParamGroup& Model::group(const std::string& name) const {
  for (const auto& g : groups_)
    if (g.name == name) return g;
  throw ConfigError("no parameter group named " + name);
}

bool Model::has_group(const std::string& name) const {
  return std::any_of(groups_.begin(), groups_.end(), [&](const ParamGroup& g) { return g.name == name; });
}

void Model::set_frozen(const std::string& name, bool frozen) { group(name).frozen = frozen; }

ForwardResult Model::forward(Tape& tape, Var input, const ForwardOptions& options) const {
  const NdArray& xv = tape.value(input);
  if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != arch_.input_rows || xv.dim(3) != arch_.input_length) {
    throw ShapeError("model input must be " + shape_str(input_shape(xv.rank() ? xv.dim(0) : 0)) + ", got " +
                     shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(0);
  ForwardResult r;
  r.params.reserve(groups_.size());
  for (const auto& g : groups_) {
    if (options.param_grads && !g.frozen) {
      r.params.emplace_back(tape.variable(g.weight), tape.variable(g.bias));
    } else {
      r.params.emplace_back(tape.constant(g.weight), tape.constant(g.bias));
    }
  }
  std::size_t gi = 0;
  Var x = input;
  for (const auto& layer : arch_.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      const auto [w, b] = r.params[gi++];
      Var y = tape.relu(tape.conv2d(x, w, b, c->padding));
      r.taps[c->name] = {x, y};
      x = y;
    } else if (const auto* blk = std::get_if<BranchBlock>(&layer)) {
      std::vector<Var> parts;
      for (const auto& br : blk->branches) {
        const auto [w, b] = r.params[gi++];
        parts.push_back(tape.conv2d(x, w, b, br.padding));
      }
      Var y = tape.relu(tape.concat_channels(parts));
      r.taps[blk->name] = {x, y};
      x = y;
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      if (tape.value(x).rank() != 2) x = tape.reshape(x, {n, tape.value(x).size() / n});
      const auto [w, b] = r.params[gi++];
      Var z = tape.dense(x, w, b);
      Var y = d->relu ? tape.relu(z) : z;
      r.taps[d->name] = {x, y};
      x = y;
    } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
      if (options.training && dr->rate > 0.0) {
        if (!options.rng) throw ConfigError("training-mode forward with dropout needs an RNG");
        x = tape.dropout(x, dr->rate, *options.rng);
      }
    }
  }
  r.logits = x;
  return r;
}

NdArray Model::logits(const NdArray& input) const {
  if (input.rank() != 4) throw ShapeError("model input must be rank 4");
  const std::size_t n = input.dim(0);
  const std::size_t per = input.size() / std::max<std::size_t>(n, 1);
  NdArray out({n, arch_.num_classes});
  for (std::size_t s = 0; s < n; s += kEvalChunk) {
    const std::size_t e = std::min(n, s + kEvalChunk);
    Shape shape = input.shape();
    shape[0] = e - s;
    NdArray chunk(shape, std::vector<double>(input.ptr() + s * per, input.ptr() + e * per));
    Tape tape;
    const auto fr = forward(tape, tape.constant(std::move(chunk)), {});
    const NdArray& z = tape.value(fr.logits);
    std::copy(z.data().begin(), z.data().end(), out.ptr() + s * arch_.num_classes);
  }
  return out;
}

ParamCounts count_params(const Model& model) {
  ParamCounts c;
  for (const auto& g : model.groups()) {
    c.per_layer.push_back({g.name, g.size()});
    c.total += g.size();
    if (!g.frozen) c.trainable += g.size();
  }
  return c;
}

// ---------------------------------------------------------------------------

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  const std::size_t n = dataset.length;
  Batch b;
  b.x = NdArray({indices.size(), 1, 2, n});
  b.labels.reserve(indices.size());
  b.snr_db.reserve(indices.size());
  double* dst = b.x.ptr();
  for (auto i : indices) {
    const IqFrame& f = dataset.frames.at(i);
    if (f.samples.size() != 2 * n) throw ShapeError("frame length does not match dataset length");
    for (float v : f.samples) *dst++ = v;
    b.labels.push_back(f.label);
    b.snr_db.push_back(f.snr_db);
  }
  return b;
}

Batch make_batch(const Dataset& dataset) {
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(dataset, idx);
}

Batch slice(const Batch& batch, std::size_t begin, std::size_t end) {
  const std::size_t per = batch.x.size() / std::max<std::size_t>(batch.size(), 1);
  Shape shape = batch.x.shape();
  shape[0] = end - begin;
  Batch out;
  out.x = NdArray(shape, std::vector<double>(batch.x.ptr() + begin * per, batch.x.ptr() + end * per));
  out.labels.assign(batch.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    batch.labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.snr_db.assign(batch.snr_db.begin() + static_cast<std::ptrdiff_t>(begin),
                    batch.snr_db.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

int argmax(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("argmax of empty row");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return static_cast<int>(best);
}

std::vector<int> argmax_rows(const NdArray& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_rows expects [N, K]");
  const std::size_t k = scores.dim(1);
  std::vector<int> out(scores.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = argmax(scores.data().subspan(r * k, k));
  return out;
}

std::vector<int> predict_labels(const Model& model, const NdArray& x) { return argmax_rows(model.logits(x)); }

int predict_label(const Model& model, const IqFrame& frame) {
  const std::size_t n = frame.length();
  if (n != model.arch().input_length || model.arch().input_rows != 2) {
    throw ShapeError("frame shape does not match model input");
  }
  NdArray x({1, 1, 2, n});
  for (std::size_t k = 0; k < 2 * n; ++k) x[k] = frame.samples[k];
  return predict_labels(model, x)[0];
}

std::vector<double> per_frame_loss(const Model& model, const NdArray& x, std::span<const int> labels) {
  const NdArray z = model.logits(x);
  const std::size_t k = z.dim(1);
  std::vector<double> out(z.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* zr = z.ptr() + r * k;
    const double mx = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += std::exp(zr[c] - mx);
    const double p = std::exp(zr[labels[r]] - mx) / total;
    out[r] = -std::log(std::max(p, kProbFloor));
  }
  return out;
}

AccuracyReport accuracy_report(const Model& model, const Dataset& dataset) {
  if (dataset.frames.empty()) throw ConfigError("accuracy: empty dataset");
  AccuracyReport rep;
  for (std::size_t s = 0; s < dataset.size(); s += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, dataset.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const Batch b = make_batch(dataset, idx);
    const auto pred = predict_labels(model, b.x);
    for (std::size_t r = 0; r < pred.size(); ++r) {
      const bool ok = pred[r] == b.labels[r];
      auto& bucket = rep.per_snr[b.snr_db[r]];
      bucket.total++;
      bucket.correct += ok;
      rep.total++;
      rep.correct += ok;
    }
  }
  rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
  return rep;
}

double accuracy(const Model& model, const Dataset& dataset) { return accuracy_report(model, dataset).accuracy; }

double mean_loss(const Model& model, const Dataset& dataset) {
  if (dataset.frames.empty()) throw ConfigError("mean_loss: empty dataset");
  double total = 0.0;
  for (std::size_t s = 0; s < dataset.size(); s += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, dataset.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const Batch b = make_batch(dataset, idx);
    for (double l : per_frame_loss(model, b.x, b.labels)) total += l;
  }
  return total / static_cast<double>(dataset.size());
}

std::vector<double> fit(Model& model, const Dataset& train, const TrainConfig& config, const LossFn& loss,
                        const BatchHook& hook) {
  if (config.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (train.num_classes() != model.num_classes()) throw ConfigError("dataset classes do not match the model head");
  if (train.length != model.arch().input_length) throw ShapeError("dataset frame length does not match the model");
  if (train.frames.empty()) throw ConfigError("empty training set");
  std::vector<double> curve;
  if (config.epochs == 0) return curve;

  std::mt19937_64 rng(derive_seed(config.seed, "fit"));
  OptimizerConfig oc = config.optimizer;
  oc.f32_storage = true;
  Optimizer opt(oc);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = (train.size() + config.batch_size - 1) / config.batch_size;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t s = bi * config.batch_size;
      const std::size_t e = std::min(train.size(), s + config.batch_size);
      const auto rows = std::span<const std::size_t>(order).subspan(s, e - s);
      Batch batch = make_batch(train, rows);
      Tape tape;
      double value = 0.0;
      ForwardResult fr;
      Var l;
      try {
        if (hook) hook(model, batch, rows, epoch, bi);
        fr = model.forward(tape, tape.constant(batch.x), {true, &rng, true});
        l = loss(tape, fr, batch);
        value = tape.value(l)[0];
      } catch (const NumericError& err) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(bi) + ": " + err.what(),
                              epoch, static_cast<int>(bi));
      }
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch), epoch, static_cast<int>(bi));
      }
      tape.backward(l);
      std::vector<ParamSlot> slots;
      slots.reserve(2 * fr.params.size());
      auto& groups = model.groups();
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const bool frozen = groups[g].frozen;
        slots.push_back({&groups[g].weight, &tape.grad(fr.params[g].first), frozen,
                         groups[g].mask.empty() ? nullptr : &groups[g].mask});
        slots.push_back({&groups[g].bias, &tape.grad(fr.params[g].second), frozen, nullptr});
      }
      try {
        opt.step(slots);
      } catch (const NumericError& err) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + err.what(), epoch,
                              static_cast<int>(bi));
      }
      total += value * static_cast<double>(e - s);
    }
    curve.push_back(total / static_cast<double>(train.size()));
    opt.set_learning_rate(opt.config().learning_rate * config.lr_decay);
  }
  return curve;
}

TrainHistory train_standard(Model& model, const Dataset& train, const TrainConfig& config) {
  TrainHistory h;
  h.initial_loss = mean_loss(model, train);
  h.epoch_loss = fit(model, train, config, [](Tape& t, const ForwardResult& fr, const Batch& b) {
    return t.cross_entropy(t.softmax(fr.logits, 1.0), b.labels);
  });
  h.final_loss = config.epochs > 0 ? mean_loss(model, train) : h.initial_loss;
  if (config.epochs > 0) {
    model.meta().provenance = "standard";
    model.meta().train_hash = train.content_hash();
    model.meta().split_id = train.provenance.split_id;
    model.meta().history.push_back({"train", config.seed, config.epochs, h.epoch_loss});
  }
  return h;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  json groups = json::array();
  for (const auto& g : model.groups()) {
    groups.push_back(json{{"name", g.name},
                          {"frozen", g.frozen},
                          {"masked", !g.mask.empty()},
                          {"weight_shape", g.weight.shape()},
                          {"bias_shape", g.bias.shape()}});
  }
  const std::string text = json{{"arch", arch_json(model.arch())}, {"meta", meta_json(model.meta())}, {"groups", groups}}.dump();
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.raw(text);
  for (const auto& g : model.groups()) {
    write_array(w, g.weight);
    write_array(w, g.bias);
  }
  return std::move(w.bytes());
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw TruncatedError("checkpoint: file shorter than header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("checkpoint: bad magic");
  ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t len = r.u64();
  const auto text = r.raw(len);
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header JSON: ") + e.what());
  }
  Model m;
  try {
    m.arch_ = arch_from(j.at("arch"));
    m.meta_ = meta_from(j.at("meta"));
    m.groups_ = allocate_groups(m.arch_);
    const auto& gj = j.at("groups");
    if (gj.size() != m.groups_.size()) throw ArchMismatchError("checkpoint: group count does not match architecture");
    for (std::size_t i = 0; i < m.groups_.size(); ++i) {
      if (gj[i].at("name").get<std::string>() != m.groups_[i].name) {
        throw ArchMismatchError("checkpoint: group order does not match architecture");
      }
      m.groups_[i].frozen = gj[i].value("frozen", false);
    }
    for (std::size_t i = 0; i < m.groups_.size(); ++i) {
      auto& g = m.groups_[i];
      read_array(r, g.weight, g.name + ".weight");
      read_array(r, g.bias, g.name + ".bias");
      if (gj[i].value("masked", false)) {
        g.mask.resize(g.weight.size());
        for (std::size_t k = 0; k < g.weight.size(); ++k) g.mask[k] = g.weight[k] != 0.0;
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after payload");
  return m;
}

void save_checkpoint(const Model& model, const std::string& path) { write_file(path, encode_checkpoint(model)); }

Model load_checkpoint(const std::string& path, std::optional<std::size_t> expected_classes) {
  Model m = decode_checkpoint(read_file(path));
  if (expected_classes && m.num_classes() != *expected_classes) {
    throw ArchMismatchError("checkpoint has " + std::to_string(m.num_classes()) + " classes, expected " +
                            std::to_string(*expected_classes));
  }
  return m;
}

}  // namespace amc
