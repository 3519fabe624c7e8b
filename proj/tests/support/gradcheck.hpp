#pragma once

// Central-difference gradient checker shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "amc/tensor.hpp"

namespace amc::testing {

/// Builds a scalar on `tape` from variables bound to `inputs`.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double max_error = 0.0;     // |autodiff - fd| / max(1, |fd|)
  double max_relative = 0.0;  // |autodiff - fd| / max(|autodiff|, |fd|, floor)
  std::size_t checked = 0;
};

inline double evaluate(const TapeFn& f, const std::vector<NdArray>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  return tape.value(f(tape, vars))[0];
}

inline GradCheck check_gradients(const TapeFn& f, std::vector<NdArray> inputs, double h = 1e-6,
                                 double relative_floor = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const Var out = f(tape, vars);
  tape.backward(out);
  GradCheck result;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const NdArray analytic = tape.grad(vars[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double keep = inputs[a][i];
      inputs[a][i] = keep + h;
      const double up = evaluate(f, inputs);
      inputs[a][i] = keep - h;
      const double down = evaluate(f, inputs);
      inputs[a][i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double diff = std::abs(analytic[i] - fd);
      result.max_error = std::max(result.max_error, diff / std::max(1.0, std::abs(fd)));
      result.max_relative =
          std::max(result.max_relative, diff / std::max({std::abs(analytic[i]), std::abs(fd), relative_floor}));
      ++result.checked;
    }
  }
  return result;
}

inline NdArray random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  NdArray a(std::move(shape));
  for (auto& v : a.data()) v = u(rng);
  return a;
}

/// Values bounded away from zero so ReLU kinks stay outside the FD stencil.
inline NdArray away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  NdArray a(std::move(shape));
  for (auto& v : a.data()) v = sign(rng) ? u(rng) : -u(rng);
  return a;
}

/// Projects an output onto a fixed random direction so every entry matters.
inline Var project(Tape& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tape.sum(tape.mul(out, tape.constant(random_array(tape.value(out).shape(), rng))));
}

struct Primitive {
  std::string name;
  /// Draws a fresh random instance: inputs plus the function over them.
  std::function<std::pair<std::vector<NdArray>, TapeFn>(std::mt19937_64&)> make;
};

inline std::vector<Primitive> primitives() {
  std::vector<Primitive> ps;
  auto dim = [](std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ps.push_back({"dense", [dim](std::mt19937_64& rng) {
                  const std::size_t n = dim(rng, 1, 4), i = dim(rng, 1, 5), o = dim(rng, 1, 4);
                  const std::uint64_t s = rng();
                  TapeFn f = [s](Tape& t, const std::vector<Var>& v) { return project(t, t.dense(v[0], v[1], v[2]), s); };
                  return std::pair{std::vector<NdArray>{random_array({n, i}, rng), random_array({i, o}, rng),
                                                        random_array({o}, rng)},
                                   f};
                }});
  ps.push_back({"conv2d", [dim](std::mt19937_64& rng) {
                  const std::size_t n = dim(rng, 1, 2), c = dim(rng, 1, 2), h = dim(rng, 1, 2), w = dim(rng, 3, 6);
                  const std::size_t f_ = dim(rng, 1, 3), kh = dim(rng, 1, h), kw = dim(rng, 1, 3);
                  const Padding pad{dim(rng, 0, 1), dim(rng, 0, 1), dim(rng, 0, 2), dim(rng, 0, 2)};
                  const std::uint64_t s = rng();
                  TapeFn f = [s, pad](Tape& t, const std::vector<Var>& v) {
                    return project(t, t.conv2d(v[0], v[1], v[2], pad), s);
                  };
                  return std::pair{std::vector<NdArray>{random_array({n, c, h, w}, rng),
                                                        random_array({f_, c, kh, kw}, rng), random_array({f_}, rng)},
                                   f};
                }});
  ps.push_back({"relu", [dim](std::mt19937_64& rng) {
                  const std::uint64_t s = rng();
                  TapeFn f = [s](Tape& t, const std::vector<Var>& v) { return project(t, t.relu(v[0]), s); };
                  return std::pair{std::vector<NdArray>{away_from_zero({dim(rng, 1, 3), dim(rng, 1, 6)}, rng)}, f};
                }});
  ps.push_back({"concat_channels", [dim](std::mt19937_64& rng) {
                  const std::size_t n = dim(rng, 1, 2), h = dim(rng, 1, 2), w = dim(rng, 1, 4);
                  const std::uint64_t s = rng();
                  TapeFn f = [s](Tape& t, const std::vector<Var>& v) {
                    const std::vector<Var> parts{v[0], v[1]};
                    return project(t, t.concat_channels(parts), s);
                  };
                  return std::pair{std::vector<NdArray>{random_array({n, dim(rng, 1, 3), h, w}, rng),
                                                        random_array({n, dim(rng, 1, 3), h, w}, rng)},
                                   f};
                }});
  ps.push_back({"reshape", [dim](std::mt19937_64& rng) {
                  const std::size_t a = dim(rng, 1, 3), b = dim(rng, 1, 4);
                  const std::uint64_t s = rng();
                  TapeFn f = [s, a, b](Tape& t, const std::vector<Var>& v) {
                    return project(t, t.reshape(v[0], {a * b}), s);
                  };
                  return std::pair{std::vector<NdArray>{random_array({a, b}, rng)}, f};
                }});
  ps.push_back({"dropout", [dim](std::mt19937_64& rng) {
                  const std::uint64_t s = rng(), mask_seed = rng();
                  TapeFn f = [s, mask_seed](Tape& t, const std::vector<Var>& v) {
                    std::mt19937_64 mask_rng(mask_seed);
                    return project(t, t.dropout(v[0], 0.3, mask_rng), s);
                  };
                  return std::pair{std::vector<NdArray>{random_array({dim(rng, 1, 3), dim(rng, 2, 8)}, rng)}, f};
                }});
  ps.push_back({"softmax", [dim](std::mt19937_64& rng) {
                  const double temp = std::uniform_real_distribution<double>(0.5, 12.0)(rng);
                  const std::uint64_t s = rng();
                  TapeFn f = [s, temp](Tape& t, const std::vector<Var>& v) { return project(t, t.softmax(v[0], temp), s); };
                  return std::pair{std::vector<NdArray>{random_array({dim(rng, 1, 3), dim(rng, 2, 6)}, rng, -3, 3)}, f};
                }});
  ps.push_back({"cross_entropy", [dim](std::mt19937_64& rng) {
                  const std::size_t n = dim(rng, 1, 4), k = dim(rng, 2, 5);
                  std::vector<int> labels(n);
                  for (auto& y : labels) y = static_cast<int>(dim(rng, 0, k - 1));
                  TapeFn f = [labels](Tape& t, const std::vector<Var>& v) { return t.cross_entropy(v[0], labels); };
                  return std::pair{std::vector<NdArray>{random_array({n, k}, rng, 0.05, 1.0)}, f};
                }});
  ps.push_back({"kl_divergence", [dim](std::mt19937_64& rng) {
                  const std::size_t n = dim(rng, 1, 4), k = dim(rng, 2, 5);
                  TapeFn f = [](Tape& t, const std::vector<Var>& v) { return t.kl_divergence(v[0], v[1]); };
                  return std::pair{std::vector<NdArray>{random_array({n, k}, rng, 0.05, 1.0),
                                                        random_array({n, k}, rng, 0.05, 1.0)},
                                   f};
                }});
  ps.push_back({"add", [dim](std::mt19937_64& rng) {
                  const Shape sh{dim(rng, 1, 3), dim(rng, 1, 4)};
                  const std::uint64_t s = rng();
                  TapeFn f = [s](Tape& t, const std::vector<Var>& v) { return project(t, t.add(v[0], v[1]), s); };
                  return std::pair{std::vector<NdArray>{random_array(sh, rng), random_array(sh, rng)}, f};
                }});
  ps.push_back({"scale", [dim](std::mt19937_64& rng) {
                  const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
                  const std::uint64_t s = rng();
                  TapeFn f = [s, c](Tape& t, const std::vector<Var>& v) { return project(t, t.scale(v[0], c), s); };
                  return std::pair{std::vector<NdArray>{random_array({dim(rng, 1, 3), dim(rng, 1, 4)}, rng)}, f};
                }});
  ps.push_back({"mul", [dim](std::mt19937_64& rng) {
                  const Shape sh{dim(rng, 1, 3), dim(rng, 1, 4)};
                  const std::uint64_t s = rng();
                  TapeFn f = [s](Tape& t, const std::vector<Var>& v) { return project(t, t.mul(v[0], v[1]), s); };
                  return std::pair{std::vector<NdArray>{random_array(sh, rng), random_array(sh, rng)}, f};
                }});
  ps.push_back({"square", [dim](std::mt19937_64& rng) {
                  const std::uint64_t s = rng();
                  TapeFn f = [s](Tape& t, const std::vector<Var>& v) { return project(t, t.square(v[0]), s); };
                  return std::pair{std::vector<NdArray>{random_array({dim(rng, 1, 3), dim(rng, 1, 4)}, rng)}, f};
                }});
  ps.push_back({"sum", [dim](std::mt19937_64& rng) {
                  TapeFn f = [](Tape& t, const std::vector<Var>& v) { return t.sum(v[0]); };
                  return std::pair{std::vector<NdArray>{random_array({dim(rng, 1, 3), dim(rng, 1, 4)}, rng)}, f};
                }});
  return ps;
}

}  // namespace amc::testing
