#include "amc/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "amc/error.hpp"

namespace amc {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void require_same_shape(const NdArray& a, const NdArray& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const NdArray& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

struct ConvGeom {
  std::size_t n, c, h, w, f, kh, kw, ho, wo;
  Padding pad;
  std::size_t ckk() const { return c * kh * kw; }
  std::size_t hw_out() const { return ho * wo; }
};

// cols[(ci*kh + i)*kw + j][oh*wo + ow] = x[ci][oh + i - top][ow + j - left]
void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::size_t hw = g.hw_out();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* xc = x + ci * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((ci * g.kh + i) * g.kw + j) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          double* out = row + oh * g.wo;
          const auto ih = static_cast<std::ptrdiff_t>(oh + i) - static_cast<std::ptrdiff_t>(g.pad.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* xr = xc + static_cast<std::size_t>(ih) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow + j) - static_cast<std::ptrdiff_t>(g.pad.left);
            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : xr[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* cols, double* dx) {
  const std::size_t hw = g.hw_out();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    double* dxc = dx + ci * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((ci * g.kh + i) * g.kw + j) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + i) - static_cast<std::ptrdiff_t>(g.pad.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dxr = dxc + static_cast<std::size_t>(ih) * g.w;
          const double* in = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow + j) - static_cast<std::ptrdiff_t>(g.pad.left);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) dxr[iw] += in[ow];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("NdArray: shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                     " values");
  }
}

NdArray NdArray::vector(std::initializer_list<double> values) {
  return NdArray({values.size()}, std::vector<double>(values));
}

NdArray NdArray::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return NdArray(std::move(shape), data_);
}

bool NdArray::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void NdArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Padding Padding::same(std::size_t kernel_h, std::size_t kernel_w) {
  return {(kernel_h - 1) / 2, kernel_h - 1 - (kernel_h - 1) / 2, (kernel_w - 1) / 2,
          kernel_w - 1 - (kernel_w - 1) / 2};
}

Padding Padding::same_time(std::size_t kernel_w) { return {0, 0, (kernel_w - 1) / 2, kernel_w - 1 - (kernel_w - 1) / 2}; }

// ---------------------------------------------------------------------------

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw Error("Var does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw Error("Var does not belong to this tape");
  return nodes_[v.id];
}

NdArray& Tape::grad_buffer(std::size_t id) { return nodes_[id].grad; }

Var Tape::push(NdArray value, bool requires_grad, std::function<void(Tape&, std::size_t)> backward,
               const char* op) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(NdArray value) { return push(std::move(value), false, nullptr, "constant"); }

Var Tape::variable(NdArray value) { return push(std::move(value), true, nullptr, "variable"); }

const NdArray& Tape::value(Var v) const { return node(v).value; }

const NdArray& Tape::grad(Var v) const { return node(v).grad; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::dense(Var x, Var w, Var b) {
  const NdArray& xv = value(x);
  const NdArray& wv = value(w);
  const NdArray& bv = value(b);
  require_rank(xv, 2, "dense");
  require_rank(wv, 2, "dense");
  require_rank(bv, 1, "dense");
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  if (wv.dim(0) != in || bv.dim(0) != out) {
    throw ShapeError("dense: x " + shape_str(xv.shape()) + ", w " + shape_str(wv.shape()) + ", b " +
                     shape_str(bv.shape()));
  }
  NdArray y({n, out});
  MapR ym(y.ptr(), n, out);
  ym.noalias() = CMapR(xv.ptr(), n, in) * CMapR(wv.ptr(), in, out);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < out; ++c) ym(r, c) += bv[c];

  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  return push(std::move(y), rg,
              [x, w, b, n, in, out](Tape& t, std::size_t self) {
                CMapR gy(t.nodes_[self].grad.ptr(), n, out);
                if (t.nodes_[x.id].requires_grad) {
                  MapR(t.grad_buffer(x.id).ptr(), n, in).noalias() +=
                      gy * CMapR(t.nodes_[w.id].value.ptr(), in, out).transpose();
                }
                if (t.nodes_[w.id].requires_grad) {
                  MapR(t.grad_buffer(w.id).ptr(), in, out).noalias() +=
                      CMapR(t.nodes_[x.id].value.ptr(), n, in).transpose() * gy;
                }
                if (t.nodes_[b.id].requires_grad) {
                  double* gb = t.grad_buffer(b.id).ptr();
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < out; ++c) gb[c] += gy(r, c);
                }
              },
              "dense");
}

Var Tape::conv2d(Var x, Var w, Var b, const Padding& pad) {
  const NdArray& xv = value(x);
  const NdArray& wv = value(w);
  const NdArray& bv = value(b);
  require_rank(xv, 4, "conv2d");
  require_rank(wv, 4, "conv2d");
  require_rank(bv, 1, "conv2d");
  ConvGeom g{};
  g.n = xv.dim(0);
  g.c = xv.dim(1);
  g.h = xv.dim(2);
  g.w = xv.dim(3);
  g.f = wv.dim(0);
  g.kh = wv.dim(2);
  g.kw = wv.dim(3);
  g.pad = pad;
  if (wv.dim(1) != g.c || bv.dim(0) != g.f) {
    throw ShapeError("conv2d: x " + shape_str(xv.shape()) + ", w " + shape_str(wv.shape()) + ", b " +
                     shape_str(bv.shape()));
  }
  if (g.h + pad.top + pad.bottom < g.kh || g.w + pad.left + pad.right < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.ho = g.h + pad.top + pad.bottom - g.kh + 1;
  g.wo = g.w + pad.left + pad.right - g.kw + 1;

  NdArray y({g.n, g.f, g.ho, g.wo});
  std::vector<double> cols(g.ckk() * g.hw_out());
  CMapR wm(wv.ptr(), g.f, g.ckk());
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(g, xv.ptr() + s * g.c * g.h * g.w, cols.data());
    MapR ys(y.ptr() + s * g.f * g.hw_out(), g.f, g.hw_out());
    ys.noalias() = wm * CMapR(cols.data(), g.ckk(), g.hw_out());
    for (std::size_t f = 0; f < g.f; ++f) ys.row(f).array() += bv[f];
  }

  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  return push(std::move(y), rg,
              [x, w, b, g](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                const bool gx = t.nodes_[x.id].requires_grad;
                const bool gw = t.nodes_[w.id].requires_grad;
                const bool gbias = t.nodes_[b.id].requires_grad;
                CMapR wm(t.nodes_[w.id].value.ptr(), g.f, g.ckk());
                std::vector<double> cols(g.ckk() * g.hw_out());
                const double* xv = t.nodes_[x.id].value.ptr();
                for (std::size_t s = 0; s < g.n; ++s) {
                  CMapR gys(gy.ptr() + s * g.f * g.hw_out(), g.f, g.hw_out());
                  if (gw) {
                    im2col(g, xv + s * g.c * g.h * g.w, cols.data());
                    MapR(t.grad_buffer(w.id).ptr(), g.f, g.ckk()).noalias() +=
                        gys * CMapR(cols.data(), g.ckk(), g.hw_out()).transpose();
                  }
                  if (gbias) {
                    double* gb = t.grad_buffer(b.id).ptr();
                    for (std::size_t f = 0; f < g.f; ++f) gb[f] += gys.row(f).sum();
                  }
                  if (gx) {
                    MapR(cols.data(), g.ckk(), g.hw_out()).noalias() = wm.transpose() * gys;
                    col2im_add(g, cols.data(), t.grad_buffer(x.id).ptr() + s * g.c * g.h * g.w);
                  }
                }
              },
              "conv2d");
}

Var Tape::relu(Var x) {
  const NdArray& xv = value(x);
  NdArray y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return push(std::move(y), requires_grad(x),
              [x](Tape& t, std::size_t self) {
                const NdArray& xv = t.nodes_[x.id].value;
                const NdArray& gy = t.nodes_[self].grad;
                NdArray& gx = t.grad_buffer(x.id);
                for (std::size_t i = 0; i < gx.size(); ++i)
                  if (xv[i] > 0.0) gx[i] += gy[i];
              },
              "relu");
}

Var Tape::concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const NdArray& first = value(parts[0]);
  require_rank(first, 4, "concat_channels");
  const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t channels = 0;
  bool rg = false;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    const NdArray& v = value(p);
    require_rank(v, 4, "concat_channels");
    if (v.dim(0) != n || v.dim(2) != h || v.dim(3) != w) {
      throw ShapeError("concat_channels: " + shape_str(v.shape()) + " incompatible with " + shape_str(first.shape()));
    }
    offsets.push_back(channels);
    channels += v.dim(1);
    rg = rg || requires_grad(p);
  }
  const std::size_t plane = h * w;
  NdArray y({n, channels, h, w});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const NdArray& v = value(parts[k]);
    const std::size_t ck = v.dim(1);
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(v.ptr() + s * ck * plane, ck * plane, y.ptr() + (s * channels + offsets[k]) * plane);
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(y), rg,
              [inputs, offsets, n, channels, plane](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                for (std::size_t k = 0; k < inputs.size(); ++k) {
                  if (!t.nodes_[inputs[k].id].requires_grad) continue;
                  NdArray& gx = t.grad_buffer(inputs[k].id);
                  const std::size_t ck = gx.dim(1);
                  for (std::size_t s = 0; s < n; ++s) {
                    const double* src = gy.ptr() + (s * channels + offsets[k]) * plane;
                    double* dst = gx.ptr() + s * ck * plane;
                    for (std::size_t i = 0; i < ck * plane; ++i) dst[i] += src[i];
                  }
                }
              },
              "concat_channels");
}

Var Tape::reshape(Var x, Shape shape) {
  NdArray y = value(x).reshaped(std::move(shape));
  return push(std::move(y), requires_grad(x),
              [x](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                NdArray& gx = t.grad_buffer(x.id);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
              },
              "reshape");
}

Var Tape::dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const NdArray& xv = value(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(xv.size());
  for (auto& m : mask) m = uniform01(rng) >= rate ? keep_scale : 0.0;
  NdArray y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];
  return push(std::move(y), requires_grad(x),
              [x, mask = std::move(mask)](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                NdArray& gx = t.grad_buffer(x.id);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
              },
              "dropout");
}

Var Tape::softmax(Var logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("softmax temperature must be > 0");
  const NdArray& z = value(logits);
  require_rank(z, 2, "softmax");
  const std::size_t n = z.dim(0), k = z.dim(1);
  NdArray y(z.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.ptr() + r * k;
    double* yr = y.ptr() + r * k;
    const double mx = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      yr[c] = std::exp((zr[c] - mx) / temperature);
      total += yr[c];
    }
    for (std::size_t c = 0; c < k; ++c) yr[c] /= total;
  }
  return push(std::move(y), requires_grad(logits),
              [logits, n, k, temperature](Tape& t, std::size_t self) {
                const NdArray& y = t.nodes_[self].value;
                const NdArray& gy = t.nodes_[self].grad;
                NdArray& gz = t.grad_buffer(logits.id);
                for (std::size_t r = 0; r < n; ++r) {
                  double dot = 0.0;
                  for (std::size_t c = 0; c < k; ++c) dot += y[r * k + c] * gy[r * k + c];
                  for (std::size_t c = 0; c < k; ++c)
                    gz[r * k + c] += y[r * k + c] * (gy[r * k + c] - dot) / temperature;
                }
              },
              "softmax");
}

Var Tape::cross_entropy(Var probs, std::span<const int> labels, Reduction reduction) {
  const NdArray& p = value(probs);
  require_rank(p, 2, "cross_entropy");
  const std::size_t n = p.dim(0), k = p.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ShapeError("cross_entropy: label out of range");
    total -= std::log(std::max(p[r * k + static_cast<std::size_t>(y)], kProbFloor));
  }
  const double norm = reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;
  NdArray out(Shape{}, total * norm);
  std::vector<int> lab(labels.begin(), labels.end());
  return push(std::move(out), requires_grad(probs),
              [probs, lab = std::move(lab), n, k, norm](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad[0] * norm;
                const NdArray& p = t.nodes_[probs.id].value;
                NdArray& gp = t.grad_buffer(probs.id);
                for (std::size_t r = 0; r < n; ++r) {
                  const std::size_t idx = r * k + static_cast<std::size_t>(lab[r]);
                  if (p[idx] > kProbFloor) gp[idx] -= g / p[idx];
                }
              },
              "cross_entropy");
}

Var Tape::kl_divergence(Var p_ref, Var q, Reduction reduction) {
  const NdArray& pv = value(p_ref);
  const NdArray& qv = value(q);
  require_rank(pv, 2, "kl_divergence");
  require_same_shape(pv, qv, "kl_divergence");
  const std::size_t n = pv.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] > 0.0) total += pv[i] * (std::log(std::max(pv[i], kProbFloor)) - std::log(std::max(qv[i], kProbFloor)));
  }
  const double norm = reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;
  NdArray out(Shape{}, total * norm);
  return push(std::move(out), requires_grad(p_ref) || requires_grad(q),
              [p_ref, q, norm](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad[0] * norm;
                const NdArray& pv = t.nodes_[p_ref.id].value;
                const NdArray& qv = t.nodes_[q.id].value;
                if (t.nodes_[q.id].requires_grad) {
                  NdArray& gq = t.grad_buffer(q.id);
                  for (std::size_t i = 0; i < gq.size(); ++i)
                    if (qv[i] > kProbFloor) gq[i] -= g * pv[i] / qv[i];
                }
                if (t.nodes_[p_ref.id].requires_grad) {
                  NdArray& gp = t.grad_buffer(p_ref.id);
                  for (std::size_t i = 0; i < gp.size(); ++i) {
                    if (pv[i] < 0.0) continue;
                    double d = std::log(std::max(pv[i], kProbFloor)) - std::log(std::max(qv[i], kProbFloor));
                    if (pv[i] > kProbFloor) d += 1.0;
                    gp[i] += g * d;
                  }
                }
              },
              "kl_divergence");
}

Var Tape::add(Var a, Var b) {
  const NdArray& av = value(a);
  const NdArray& bv = value(b);
  require_same_shape(av, bv, "add");
  NdArray y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return push(std::move(y), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                for (Var v : {a, b}) {
                  if (!t.nodes_[v.id].requires_grad) continue;
                  NdArray& gv = t.grad_buffer(v.id);
                  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += gy[i];
                }
              },
              "add");
}

Var Tape::scale(Var a, double factor) {
  const NdArray& av = value(a);
  NdArray y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
  return push(std::move(y), requires_grad(a),
              [a, factor](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                NdArray& ga = t.grad_buffer(a.id);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * factor;
              },
              "scale");
}

Var Tape::mul(Var a, Var b) {
  const NdArray& av = value(a);
  const NdArray& bv = value(b);
  require_same_shape(av, bv, "mul");
  NdArray y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return push(std::move(y), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, std::size_t self) {
                const NdArray& gy = t.nodes_[self].grad;
                const NdArray& av = t.nodes_[a.id].value;
                const NdArray& bv = t.nodes_[b.id].value;
                if (t.nodes_[a.id].requires_grad) {
                  NdArray& ga = t.grad_buffer(a.id);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
                }
                if (t.nodes_[b.id].requires_grad) {
                  NdArray& gb = t.grad_buffer(b.id);
                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
                }
              },
              "mul");
}

Var Tape::square(Var a) { return mul(a, a); }

Var Tape::sum(Var a) {
  const NdArray& av = value(a);
  double total = 0.0;
  for (double v : av.data()) total += v;
  return push(NdArray(Shape{}, total), requires_grad(a),
              [a](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad[0];
                NdArray& ga = t.grad_buffer(a.id);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
              },
              "sum");
}

void Tape::backward(Var output) {
  if (node(output).value.size() != 1) {
    throw ShapeError("backward: output is not scalar " + shape_str(node(output).value.shape()));
  }
  backward(output, NdArray(node(output).value.shape(), 1.0));
}

void Tape::backward(Var output, const NdArray& seed) {
  Node& out = node(output);
  if (seed.shape() != out.value.shape()) {
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) + " vs output " + shape_str(out.value.shape()));
  }
  for (std::size_t i = 0; i <= output.id; ++i) {
    Node& n = nodes_[i];
    if (n.grad.shape() == n.value.shape() && n.grad.size() == n.value.size()) {
      n.grad.fill(0.0);
    } else {
      n.grad = NdArray(n.value.shape(), 0.0);
    }
  }
  out.grad = seed;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------

void Optimizer::step(std::span<const ParamSlot> slots) {
  if (first_.size() != slots.size()) {
    first_.assign(slots.size(), NdArray());
    second_.assign(slots.size(), NdArray());
  }
  ++steps_;
  const auto& c = config_;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const ParamSlot& slot = slots[s];
    if (slot.frozen) continue;
    NdArray& p = *slot.value;
    const NdArray& g = *slot.grad;
    if (g.shape() != p.shape()) throw ShapeError("optimizer: gradient shape does not match parameter");
    if (!g.all_finite()) throw NumericError("optimizer: non-finite gradient");
    const std::uint8_t* mask = slot.mask ? slot.mask->data() : nullptr;
    if (mask && slot.mask->size() != p.size()) throw ShapeError("optimizer: mask size does not match parameter");

    if (c.method == OptimizerMethod::kSgd) {
      if (c.momentum != 0.0) {
        if (first_[s].shape() != p.shape()) first_[s] = NdArray(p.shape(), 0.0);
        NdArray& buf = first_[s];
        for (std::size_t i = 0; i < p.size(); ++i) {
          buf[i] = c.momentum * buf[i] + g[i];
          p[i] -= c.learning_rate * buf[i];
        }
      } else {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= c.learning_rate * g[i];
      }
    } else {
      if (first_[s].shape() != p.shape()) {
        first_[s] = NdArray(p.shape(), 0.0);
        second_[s] = NdArray(p.shape(), 0.0);
      }
      NdArray& m = first_[s];
      NdArray& v = second_[s];
      const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(steps_));
      const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(steps_));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        p[i] -= c.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.epsilon);
      }
    }
    if (mask) {
      for (std::size_t i = 0; i < p.size(); ++i)
        if (!mask[i]) p[i] = 0.0;
    }
    if (c.f32_storage) {
      for (auto& v : p.data()) v = static_cast<double>(static_cast<float>(v));
    }
    if (!p.all_finite()) throw NumericError("optimizer: parameter became non-finite");
  }
}

}  // namespace amc
