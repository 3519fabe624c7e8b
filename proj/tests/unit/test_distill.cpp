#include <doctest.h>

#include <cmath>

#include "amc/distill.hpp"
#include "amc/error.hpp"

using namespace amc;

namespace {

Dataset small_dataset(std::size_t per_class = 30) {
  GeneratorConfig c;
  c.classes = {"BPSK", "QPSK", "8PSK", "QAM16"};
  c.snr_grid_db = {10.0};
  c.frames_per_cell = per_class;
  c.seed = 5;
  return generate_dataset(c);
}

/// Independent row-wise softmax at temperature t.
std::vector<std::vector<double>> softmax_rows(const NdArray& logits, double t) {
  std::vector<std::vector<double>> out(logits.dim(0));
  const std::size_t k = logits.dim(1);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[r * k + c] / t);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[r * k + c] / t - mx);
    for (std::size_t c = 0; c < k; ++c) out[r].push_back(std::exp(logits[r * k + c] / t - mx) / z);
  }
  return out;
}

struct Fixture {
  Dataset data = small_dataset();
  Batch batch = make_batch(data, std::vector<std::size_t>{0, 31, 62, 93, 5, 40});
  Model teacher = Model::build(desk_teacher(4), 1);
  Model student = Model::build(desk_student(4), 2);

  DistillLossParts parts(const DistillConfig& cfg) {
    Tape tape;
    const Var logits = tape.constant(student.logits(batch.x));
    DistillLossParts p;
    distill_loss(tape, logits, teacher_probabilities(teacher, batch.x, cfg.temperature), batch.labels, cfg, &p);
    return p;
  }
};

}  // namespace

TEST_CASE("loss terms match an independent evaluation") {
  Fixture f;
  DistillConfig cfg;
  cfg.temperature = 4.0;
  cfg.alpha = 0.3;
  const auto p = f.parts(cfg);
  const auto q = softmax_rows(f.student.logits(f.batch.x), 4.0);
  const auto q1 = softmax_rows(f.student.logits(f.batch.x), 1.0);
  const auto pt = softmax_rows(f.teacher.logits(f.batch.x), 4.0);
  double kd = 0.0, ce = 0.0;
  for (std::size_t r = 0; r < q.size(); ++r) {
    for (std::size_t c = 0; c < 4; ++c) kd += pt[r][c] * std::log(pt[r][c] / q[r][c]);
    ce -= std::log(q1[r][static_cast<std::size_t>(f.batch.labels[r])]);
  }
  kd /= static_cast<double>(q.size());
  ce /= static_cast<double>(q.size());
  CHECK(p.kd == doctest::Approx(kd).epsilon(1e-10));
  CHECK(p.ce == doctest::Approx(ce).epsilon(1e-10));
  CHECK(p.total == doctest::Approx(0.3 * kd + 0.7 * ce).epsilon(1e-10));

  cfg.literal_alg1 = true;
  double ce_soft = 0.0;
  for (std::size_t r = 0; r < q.size(); ++r) ce_soft -= std::log(q[r][static_cast<std::size_t>(f.batch.labels[r])]);
  CHECK(f.parts(cfg).ce == doctest::Approx(ce_soft / static_cast<double>(q.size())).epsilon(1e-10));

  cfg.literal_alg1 = false;
  cfg.t_squared = true;
  CHECK(f.parts(cfg).kd == doctest::Approx(16.0 * kd).epsilon(1e-10));
}

TEST_CASE("total is linear in alpha") {
  Fixture f;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    DistillConfig a, b;
    a.alpha = u(rng);
    b.alpha = u(rng);
    a.temperature = b.temperature = 1.0 + 10.0 * u(rng);
    const auto pa = f.parts(a);
    const auto pb = f.parts(b);
    CHECK(std::abs((pa.total - pb.total) - (a.alpha - b.alpha) * (pa.kd - pa.ce)) < 1e-9);
  }
}

TEST_CASE("degenerate weights") {
  Fixture f;
  DistillConfig cfg;
  cfg.temperature = 1.0;
  cfg.alpha = 0.0;
  const auto p = f.parts(cfg);
  CHECK(p.total == p.ce);

  // A student identical to the teacher has nothing left to match.
  cfg.alpha = 1.0;
  cfg.temperature = 10.0;
  Tape tape;
  const Var logits = tape.constant(f.teacher.logits(f.batch.x));
  DistillLossParts same;
  distill_loss(tape, logits, teacher_probabilities(f.teacher, f.batch.x, 10.0), f.batch.labels, cfg, &same);
  CHECK(std::abs(same.kd) < 1e-12);
  CHECK(same.total == same.kd);
}

TEST_CASE("alpha = 0 distillation reproduces standard training") {
  const auto data = small_dataset(20);
  const auto teacher = Model::build(desk_teacher(4), 1);
  auto a = Model::build(desk_student(4), 7);
  auto b = a;
  TrainConfig t;
  t.epochs = 2;
  t.seed = 13;
  DistillConfig cfg;
  cfg.alpha = 0.0;
  cfg.train = t;
  const auto hd = distill(teacher, a, data, cfg);
  const auto hs = train_standard(b, data, t);
  CHECK(hd.epoch_loss == hs.epoch_loss);
  for (std::size_t g = 0; g < a.groups().size(); ++g) {
    CHECK(a.groups()[g].weight == b.groups()[g].weight);
    CHECK(a.groups()[g].bias == b.groups()[g].bias);
  }
  CHECK(a.meta().provenance == "distilled");
}

TEST_CASE("the teacher is never written") {
  const auto data = small_dataset(10);
  Model teacher = Model::build(desk_teacher(4), 1);
  const auto before = encode_checkpoint(teacher);
  auto student = Model::build(desk_student(4), 2);
  DistillConfig cfg;
  cfg.train.epochs = 1;
  distill(teacher, student, data, cfg);
  CHECK(encode_checkpoint(teacher) == before);
}

TEST_CASE("configuration errors") {
  DistillConfig cfg;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.temperature = 2.0;
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  const auto data = small_dataset(5);
  const auto teacher = Model::build(desk_teacher(5), 1);
  auto student = Model::build(desk_student(4), 2);
  CHECK_THROWS_AS(distill(teacher, student, data, DistillConfig{}), ConfigError);
}
