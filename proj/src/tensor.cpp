#include "i2st/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace i2st {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local Tape* g_active_tape = nullptr;

void check_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(s));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Collapses `shape` into [outer, len, inner] around `axis`.
struct AxisView {
  long long outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  v.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i)
    v.inner *= s[i];
  return v;
}

Tensor make_tensor(Shape shape, Eigen::ArrayXd value) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.data() = std::move(value);
  return t;
}

void ensure_grad(TensorNode& n) {
  if (n.grad.size() == 0) n.grad = Eigen::ArrayXd::Zero(n.value.size());
}

// Registers the backward rule if any input is tracked on an active tape.
template <typename Pull>
void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
            Pull&& pull) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return;
  bool tracked = false;
  for (const Tensor* t : inputs) tracked = tracked || (*t).requires_grad();
  if (!tracked) return;
  out.node()->requires_grad = true;
  tape->push(out.node(), std::forward<Pull>(pull));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

long long numel(const Shape& s) {
  long long n = 1;
  for (int e : s) n *= e;
  return n;
}

Tensor Tensor::zeros(Shape shape) {
  for (int e : shape) {
    if (e <= 0)
      throw DimensionError("tensor extents must be positive, got " +
                           shape_str(shape));
  }
  auto n = std::make_shared<TensorNode>();
  n->value = Eigen::ArrayXd::Zero(numel(shape));
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::constant(Shape shape, double v) {
  Tensor t = zeros(std::move(shape));
  t.data().setConstant(v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  Tensor t = zeros(std::move(shape));
  if (static_cast<long long>(data.size()) != t.size())
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not fill shape " + shape_str(t.shape()));
  for (long long i = 0; i < t.size(); ++i) t.data()(i) = data[static_cast<std::size_t>(i)];
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t = zeros(Shape{});
  t.data()(0) = v;
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double scale) {
  Tensor t = zeros(std::move(shape));
  for (long long i = 0; i < t.size(); ++i) t.data()(i) = rng.normal() * scale;
  return t;
}

double Tensor::item() const {
  if (size() != 1)
    throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value(0);
}

namespace {
long long flat_index(const Shape& s, std::initializer_list<int> idx) {
  if (idx.size() != s.size())
    throw DimensionError("index rank " + std::to_string(idx.size()) +
                         " vs tensor shape " + shape_str(s));
  long long flat = 0;
  std::size_t d = 0;
  for (int i : idx) {
    flat = flat * s[d] + i;
    ++d;
  }
  return flat;
}
}  // namespace

double Tensor::at(std::initializer_list<int> idx) const {
  return node_->value(flat_index(node_->shape, idx));
}

double& Tensor::at(std::initializer_list<int> idx) {
  return node_->value(flat_index(node_->shape, idx));
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) ensure_grad(*node_);
}

void Tensor::zero_grad() {
  if (node_->grad.size() > 0) node_->grad.setZero();
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  // Intermediates (the outputs recorded on this tape) start from zero each
  // sweep; leaves are left alone so their gradients accumulate.
  for (auto& r : records_) {
    ensure_grad(*r.out);
    r.out->grad.setZero();
  }
  ensure_grad(*loss.node());
  loss.node()->grad(0) += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->pull(*it->out);
  }
}

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_tensor(a.shape(), a.data() + b.data());
  record(out, {&a, &b}, [an = a.node(), bn = b.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad;
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      bn->grad += o.grad;
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_tensor(a.shape(), a.data() - b.data());
  record(out, {&a, &b}, [an = a.node(), bn = b.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad;
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      bn->grad -= o.grad;
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_tensor(a.shape(), a.data() * b.data());
  record(out, {&a, &b}, [an = a.node(), bn = b.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad * bn->value;
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      bn->grad += o.grad * an->value;
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out = make_tensor(a.shape(), a.data() / b.data());
  record(out, {&a, &b}, [an = a.node(), bn = b.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad / bn->value;
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      bn->grad -= o.grad * an->value / (bn->value * bn->value);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_tensor(a.shape(), a.data() * c);
  record(out, {&a}, [an = a.node(), c](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad * c;
    }
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_tensor(a.shape(), a.data() + c);
  record(out, {&a}, [an = a.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad;
    }
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_tensor(a.shape(), a.data().max(0.0));
  record(out, {&a}, [an = a.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad * (an->value > 0.0).cast<double>();
    }
  });
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Eigen::ArrayXd y(a.size());
  for (long long i = 0; i < a.size(); ++i) {
    const double x = a.data()(i);
    if (x >= 0.0) {
      y(i) = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      y(i) = e / (1.0 + e);
    }
  }
  Tensor out = make_tensor(a.shape(), std::move(y));
  record(out, {&a}, [an = a.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad * o.value * (1.0 - o.value);
    }
  });
  return out;
}

Tensor sqrt(const Tensor& a) {
  Tensor out = make_tensor(a.shape(), a.data().sqrt());
  record(out, {&a}, [an = a.node()](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad * 0.5 / o.value;
    }
  });
  return out;
}

Tensor clamp_min(const Tensor& a, double c) {
  Tensor out = make_tensor(a.shape(), a.data().max(c));
  record(out, {&a, &a}, [an = a.node(), c](const TensorNode& o) {
    if (an->requires_grad) {
      ensure_grad(*an);
      an->grad += o.grad * (an->value > c).cast<double>();
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out = Tensor::zeros({m, n});
  MatMap(out.data().data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  record(out, {&a, &b},
         [an = a.node(), bn = b.node(), m, k, n](const TensorNode& o) {
           ConstMatMap go(o.grad.data(), m, n);
           if (an->requires_grad) {
             ensure_grad(*an);
             MatMap(an->grad.data(), m, k).noalias() +=
                 go * ConstMatMap(bn->value.data(), k, n).transpose();
           }
           if (bn->requires_grad) {
             ensure_grad(*bn);
             MatMap(bn->grad.data(), k, n).noalias() +=
                 ConstMatMap(an->value.data(), m, k).transpose() * go;
           }
         });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) ||
      a.extent(2) != b.extent(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const int B = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  Tensor out = Tensor::zeros({B, m, n});
  for (int i = 0; i < B; ++i) {
    MatMap(out.data().data() + static_cast<long long>(i) * m * n, m, n)
        .noalias() =
        ConstMatMap(a.data().data() + static_cast<long long>(i) * m * k, m, k) *
        ConstMatMap(b.data().data() + static_cast<long long>(i) * k * n, k, n);
  }
  record(out, {&a, &b},
         [an = a.node(), bn = b.node(), B, m, k, n](const TensorNode& o) {
           for (int i = 0; i < B; ++i) {
             ConstMatMap go(o.grad.data() + static_cast<long long>(i) * m * n,
                            m, n);
             if (an->requires_grad) {
               ensure_grad(*an);
               MatMap(an->grad.data() + static_cast<long long>(i) * m * k, m, k)
                   .noalias() +=
                   go * ConstMatMap(bn->value.data() +
                                        static_cast<long long>(i) * k * n,
                                    k, n)
                           .transpose();
             }
             if (bn->requires_grad) {
               ensure_grad(*bn);
               MatMap(bn->grad.data() + static_cast<long long>(i) * k * n, k, n)
                   .noalias() +=
                   ConstMatMap(an->value.data() +
                                   static_cast<long long>(i) * m * k,
                               m, k)
                       .transpose() *
                   go;
             }
           }
         });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  check_axis(a.shape(), axis, "softmax");
  const AxisView v = axis_view(a.shape(), axis);
  Eigen::ArrayXd y(a.size());
  const double* x = a.data().data();
  double* yp = y.data();
  for (long long o = 0; o < v.outer; ++o) {
    for (long long i = 0; i < v.inner; ++i) {
      const long long base = o * v.len * v.inner + i;
      double mx = x[base];
      for (long long l = 1; l < v.len; ++l)
        mx = std::max(mx, x[base + l * v.inner]);
      double sum = 0.0;
      for (long long l = 0; l < v.len; ++l) {
        const double e = std::exp(x[base + l * v.inner] - mx);
        yp[base + l * v.inner] = e;
        sum += e;
      }
      for (long long l = 0; l < v.len; ++l) yp[base + l * v.inner] /= sum;
    }
  }
  Tensor out = make_tensor(a.shape(), std::move(y));
  record(out, {&a}, [an = a.node(), v](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    const double* yv = o.value.data();
    const double* gy = o.grad.data();
    double* gx = an->grad.data();
    for (long long ou = 0; ou < v.outer; ++ou) {
      for (long long i = 0; i < v.inner; ++i) {
        const long long base = ou * v.len * v.inner + i;
        double dot = 0.0;
        for (long long l = 0; l < v.len; ++l) {
          const long long p = base + l * v.inner;
          dot += gy[p] * yv[p];
        }
        for (long long l = 0; l < v.len; ++l) {
          const long long p = base + l * v.inner;
          gx[p] += yv[p] * (gy[p] - dot);
        }
      }
    }
  });
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int label) {
  if (logits.rank() != 1)
    throw DimensionError("cross_entropy: logits must be rank 1, got " +
                         shape_str(logits.shape()));
  const int n = logits.extent(0);
  if (label < 0 || label >= n)
    throw ContractError("cross_entropy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(n) + " classes");
  const double mx = logits.data().maxCoeff();
  const double lse = std::log((logits.data() - mx).exp().sum()) + mx;
  Tensor out = Tensor::scalar(lse - logits.data()(label));
  record(out, {&logits}, [ln = logits.node(), label, lse](const TensorNode& o) {
    if (!ln->requires_grad) return;
    ensure_grad(*ln);
    const double g = o.grad(0);
    ln->grad += g * (ln->value - lse).exp();
    ln->grad(label) -= g;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  bool batched;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride,
                   int pad) {
  if (kernel.rank() != 4)
    throw DimensionError("conv2d: kernel must be [C_out×C_in×kh×kw], got " +
                         shape_str(kernel.shape()));
  ConvDims d{};
  d.batched = input.rank() == 4;
  if (input.rank() != 3 && input.rank() != 4)
    throw DimensionError("conv2d: input must be [C×H×W] or [N×C×H×W], got " +
                         shape_str(input.shape()));
  d.n = d.batched ? input.extent(0) : 1;
  d.cin = input.extent(d.batched ? 1 : 0);
  d.h = input.extent(d.batched ? 2 : 1);
  d.w = input.extent(d.batched ? 3 : 2);
  d.cout = kernel.extent(0);
  d.kh = kernel.extent(2);
  d.kw = kernel.extent(3);
  d.stride = stride;
  d.pad = pad;
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: padding must be >= 0");
  if (kernel.extent(1) != d.cin)
    throw DimensionError("conv2d: kernel expects " +
                         std::to_string(kernel.extent(1)) +
                         " input channels, input has " + std::to_string(d.cin));
  if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " +
                         shape_str(input.shape()));
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// Gathers conv patches of one image into [cin·kh·kw × ho·wo].
void im2col(const double* img, const ConvDims& d, double* cols) {
  const long long patch = static_cast<long long>(d.ho) * d.wo;
  long long row = 0;
  for (int c = 0; c < d.cin; ++c) {
    const double* plane = img + static_cast<long long>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx, ++row) {
        double* dst = cols + row * patch;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            dst[oy * d.wo + ox] =
                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                    ? plane[iy * d.w + ix]
                    : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of [cin·kh·kw × ho·wo] columns back onto one image.
void col2im_add(const double* cols, const ConvDims& d, double* img) {
  const long long patch = static_cast<long long>(d.ho) * d.wo;
  long long row = 0;
  for (int c = 0; c < d.cin; ++c) {
    double* plane = img + static_cast<long long>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx, ++row) {
        const double* src = cols + row * patch;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            if (ix < 0 || ix >= d.w) continue;
            plane[iy * d.w + ix] += src[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
              int padding) {
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  Shape out_shape = d.batched ? Shape{d.n, d.cout, d.ho, d.wo}
                              : Shape{d.cout, d.ho, d.wo};
  Tensor out = Tensor::zeros(out_shape);
  const long long ckk = static_cast<long long>(d.cin) * d.kh * d.kw;
  const long long patch = static_cast<long long>(d.ho) * d.wo;
  const long long img_sz = static_cast<long long>(d.cin) * d.h * d.w;
  const long long out_sz = static_cast<long long>(d.cout) * patch;
  Eigen::ArrayXd cols(ckk * patch);
  ConstMatMap kmap(kernel.data().data(), d.cout, ckk);
  for (int i = 0; i < d.n; ++i) {
    im2col(input.data().data() + i * img_sz, d, cols.data());
    MatMap(out.data().data() + i * out_sz, d.cout, patch).noalias() =
        kmap * ConstMatMap(cols.data(), ckk, patch);
  }
  record(out, {&input, &kernel},
         [xn = input.node(), kn = kernel.node(), d, ckk, patch, img_sz,
          out_sz](const TensorNode& o) {
           Eigen::ArrayXd cols(ckk * patch);
           Eigen::ArrayXd dcols(ckk * patch);
           ConstMatMap kmap(kn->value.data(), d.cout, ckk);
           for (int i = 0; i < d.n; ++i) {
             ConstMatMap go(o.grad.data() + i * out_sz, d.cout, patch);
             if (kn->requires_grad) {
               ensure_grad(*kn);
               im2col(xn->value.data() + i * img_sz, d, cols.data());
               MatMap(kn->grad.data(), d.cout, ckk).noalias() +=
                   go * ConstMatMap(cols.data(), ckk, patch).transpose();
             }
             if (xn->requires_grad) {
               ensure_grad(*xn);
               MatMap(dcols.data(), ckk, patch).noalias() =
                   kmap.transpose() * go;
               col2im_add(dcols.data(), d, xn->grad.data() + i * img_sz);
             }
           }
         });
  return out;
}

Tensor bias_channel(const Tensor& input, const Tensor& bias) {
  const bool batched = input.rank() == 4;
  if (input.rank() != 3 && !batched)
    throw DimensionError("bias_channel: input must be [C×H×W] or [N×C×H×W]");
  const int n = batched ? input.extent(0) : 1;
  const int c = input.extent(batched ? 1 : 0);
  const long long plane = static_cast<long long>(input.extent(batched ? 2 : 1)) *
                          input.extent(batched ? 3 : 2);
  if (bias.rank() != 1 || bias.extent(0) != c)
    throw DimensionError("bias_channel: bias " + shape_str(bias.shape()) +
                         " does not match channel count " + std::to_string(c));
  Eigen::ArrayXd y = input.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      y.segment((static_cast<long long>(i) * c + ch) * plane, plane) +=
          bias.data()(ch);
  Tensor out = make_tensor(input.shape(), std::move(y));
  record(out, {&input, &bias},
         [xn = input.node(), bn = bias.node(), n, c, plane](const TensorNode& o) {
           if (xn->requires_grad) {
             ensure_grad(*xn);
             xn->grad += o.grad;
           }
           if (bn->requires_grad) {
             ensure_grad(*bn);
             for (int i = 0; i < n; ++i)
               for (int ch = 0; ch < c; ++ch)
                 bn->grad(ch) +=
                     o.grad
                         .segment((static_cast<long long>(i) * c + ch) * plane,
                                  plane)
                         .sum();
           }
         });
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 1 ||
      a.extent(a.rank() - 1) != b.extent(0))
    throw DimensionError("add_rowvec: " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()));
  const long long c = b.size();
  const long long rows = a.size() / c;
  Eigen::ArrayXd y = a.data();
  for (long long r = 0; r < rows; ++r) y.segment(r * c, c) += b.data();
  Tensor out = make_tensor(a.shape(), std::move(y));
  record(out, {&a, &b},
         [an = a.node(), bn = b.node(), rows, c](const TensorNode& o) {
           if (an->requires_grad) {
             ensure_grad(*an);
             an->grad += o.grad;
           }
           if (bn->requires_grad) {
             ensure_grad(*bn);
             for (long long r = 0; r < rows; ++r)
               bn->grad += o.grad.segment(r * c, c);
           }
         });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

Tensor sum_axis(const Tensor& a, int axis) {
  check_axis(a.shape(), axis, "sum_axis");
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out = Tensor::zeros(drop_axis(a.shape(), axis));
  const double* x = a.data().data();
  double* y = out.data().data();
  for (long long o = 0; o < v.outer; ++o)
    for (long long l = 0; l < v.len; ++l)
      for (long long i = 0; i < v.inner; ++i)
        y[o * v.inner + i] += x[(o * v.len + l) * v.inner + i];
  record(out, {&a}, [an = a.node(), v](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    double* gx = an->grad.data();
    const double* gy = o.grad.data();
    for (long long ou = 0; ou < v.outer; ++ou)
      for (long long l = 0; l < v.len; ++l)
        for (long long i = 0; i < v.inner; ++i)
          gx[(ou * v.len + l) * v.inner + i] += gy[ou * v.inner + i];
  });
  return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
  check_axis(a.shape(), axis, "mean_axis");
  const double inv = 1.0 / a.extent(axis);
  return scale(sum_axis(a, axis), inv);
}

Tensor min_axis(const Tensor& a, int axis) {
  check_axis(a.shape(), axis, "min_axis");
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out = Tensor::zeros(drop_axis(a.shape(), axis));
  auto argmin = std::make_shared<std::vector<long long>>(
      static_cast<std::size_t>(v.outer * v.inner));
  const double* x = a.data().data();
  double* y = out.data().data();
  for (long long o = 0; o < v.outer; ++o) {
    for (long long i = 0; i < v.inner; ++i) {
      long long best = 0;
      double bv = x[o * v.len * v.inner + i];
      for (long long l = 1; l < v.len; ++l) {
        const double cur = x[(o * v.len + l) * v.inner + i];
        if (cur < bv) {
          bv = cur;
          best = l;
        }
      }
      y[o * v.inner + i] = bv;
      (*argmin)[static_cast<std::size_t>(o * v.inner + i)] = best;
    }
  }
  record(out, {&a}, [an = a.node(), v, argmin](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    double* gx = an->grad.data();
    const double* gy = o.grad.data();
    for (long long ou = 0; ou < v.outer; ++ou)
      for (long long i = 0; i < v.inner; ++i) {
        const long long l = (*argmin)[static_cast<std::size_t>(ou * v.inner + i)];
        gx[(ou * v.len + l) * v.inner + i] += gy[ou * v.inner + i];
      }
  });
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::scalar(a.data().sum());
  record(out, {&a}, [an = a.node()](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    an->grad += o.grad(0);
  });
  return out;
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor upsample2x(const Tensor& a) {
  if (a.rank() < 2)
    throw DimensionError("upsample2x: need at least 2 axes, got " +
                         shape_str(a.shape()));
  const int h = a.extent(a.rank() - 2), w = a.extent(a.rank() - 1);
  const long long planes = a.size() / (static_cast<long long>(h) * w);
  Shape out_shape = a.shape();
  out_shape[out_shape.size() - 2] = 2 * h;
  out_shape[out_shape.size() - 1] = 2 * w;
  Tensor out = Tensor::zeros(out_shape);
  const double* x = a.data().data();
  double* y = out.data().data();
  for (long long p = 0; p < planes; ++p) {
    const double* src = x + p * h * w;
    double* dst = y + p * 4 * h * w;
    for (int iy = 0; iy < 2 * h; ++iy)
      for (int ix = 0; ix < 2 * w; ++ix)
        dst[iy * 2 * w + ix] = src[(iy / 2) * w + ix / 2];
  }
  record(out, {&a}, [an = a.node(), planes, h, w](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    double* gx = an->grad.data();
    const double* gy = o.grad.data();
    for (long long p = 0; p < planes; ++p) {
      double* dst = gx + p * h * w;
      const double* src = gy + p * 4 * h * w;
      for (int iy = 0; iy < 2 * h; ++iy)
        for (int ix = 0; ix < 2 * w; ++ix)
          dst[(iy / 2) * w + ix / 2] += src[iy * 2 * w + ix];
    }
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " +
                         shape_str(shape) + " changes element count");
  Tensor out = make_tensor(std::move(shape), a.data());
  record(out, {&a}, [an = a.node()](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    an->grad += o.grad;
  });
  return out;
}

namespace {

std::vector<long long> row_major_strides(const Shape& s) {
  std::vector<long long> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  return st;
}

// dst[multi] = src[perm(multi)], iterating dst in row-major order.
void permute_into(const double* src, const Shape& in_shape,
                  const std::vector<int>& perm, double* dst, bool accumulate) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    out_shape[static_cast<std::size_t>(i)] =
        in_shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const auto in_strides = row_major_strides(in_shape);
  std::vector<long long> step(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    step[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  const long long total = numel(in_shape);
  long long src_off = 0;
  for (long long flat = 0; flat < total; ++flat) {
    if (accumulate)
      dst[flat] += src[src_off];
    else
      dst[flat] = src[src_off];
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      idx[du]++;
      src_off += step[du];
      if (idx[du] < out_shape[du]) break;
      src_off -= step[du] * out_shape[du];
      idx[du] = 0;
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& a, std::vector<int> perm) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r)
    throw DimensionError("transpose: permutation size " +
                         std::to_string(perm.size()) + " vs rank " +
                         std::to_string(r));
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
      throw DimensionError("transpose: invalid permutation for shape " +
                           shape_str(a.shape()));
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    out_shape[static_cast<std::size_t>(i)] =
        a.extent(perm[static_cast<std::size_t>(i)]);
  Tensor out = Tensor::zeros(out_shape);
  permute_into(a.data().data(), a.shape(), perm, out.data().data(), false);
  record(out, {&a}, [an = a.node(), perm, r](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    std::vector<int> inv(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
      inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
    permute_into(o.grad.data(), o.shape, inv, an->grad.data(), true);
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  check_axis(s0, axis, "concat");
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank())
      throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.extent(i) != s0[static_cast<std::size_t>(i)])
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) +
                             " vs " + shape_str(s0));
    total += p.extent(axis);
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(out_shape);
  const AxisView ov = axis_view(out_shape, axis);
  double* y = out.data().data();
  long long off = 0;
  for (const Tensor& p : parts) {
    const AxisView pv = axis_view(p.shape(), axis);
    const double* x = p.data().data();
    for (long long o = 0; o < pv.outer; ++o)
      for (long long l = 0; l < pv.len; ++l)
        for (long long i = 0; i < pv.inner; ++i)
          y[(o * ov.len + off + l) * ov.inner + i] =
              x[(o * pv.len + l) * pv.inner + i];
    off += pv.len;
  }
  // Capture the nodes; scatter the output gradient back per part.
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<long long> lens;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    lens.push_back(axis_view(p.shape(), axis).len);
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (any && active_tape() != nullptr) {
    Tensor& outref = out;
    outref.node()->requires_grad = true;
    active_tape()->push(out.node(), [nodes, lens, ov](const TensorNode& o) {
      const double* gy = o.grad.data();
      long long off = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        TensorNode& n = *nodes[pi];
        const long long len = lens[pi];
        if (n.requires_grad) {
          ensure_grad(n);
          double* gx = n.grad.data();
          for (long long o2 = 0; o2 < ov.outer; ++o2)
            for (long long l = 0; l < len; ++l)
              for (long long i = 0; i < ov.inner; ++i)
                gx[(o2 * len + l) * ov.inner + i] +=
                    gy[(o2 * ov.len + off + l) * ov.inner + i];
        }
        off += len;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  check_axis(a.shape(), axis, "slice");
  const int len = a.extent(axis);
  if (begin < 0 || end > len || begin >= end)
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for extent " +
                         std::to_string(len));
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out = Tensor::zeros(out_shape);
  const double* x = a.data().data();
  double* y = out.data().data();
  const long long olen = end - begin;
  for (long long o = 0; o < v.outer; ++o)
    for (long long l = 0; l < olen; ++l)
      for (long long i = 0; i < v.inner; ++i)
        y[(o * olen + l) * v.inner + i] =
            x[(o * v.len + begin + l) * v.inner + i];
  record(out, {&a}, [an = a.node(), v, begin, olen](const TensorNode& o) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    double* gx = an->grad.data();
    const double* gy = o.grad.data();
    for (long long ou = 0; ou < v.outer; ++ou)
      for (long long l = 0; l < olen; ++l)
        for (long long i = 0; i < v.inner; ++i)
          gx[(ou * v.len + begin + l) * v.inner + i] +=
              gy[(ou * olen + l) * v.inner + i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization (last axis)
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (a.rank() < 1) throw DimensionError("layer_norm: rank must be >= 1");
  const int c = a.extent(a.rank() - 1);
  if (gamma.rank() != 1 || gamma.extent(0) != c || beta.rank() != 1 ||
      beta.extent(0) != c)
    throw DimensionError("layer_norm: affine params must be [" +
                         std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
  const long long rows = a.size() / c;
  Eigen::ArrayXd y(a.size());
  for (long long r = 0; r < rows; ++r) {
    auto xi = a.data().segment(r * c, c);
    const double mu = xi.mean();
    const double var = (xi - mu).square().mean();
    const double ivar = 1.0 / std::sqrt(var + eps);
    y.segment(r * c, c) = (xi - mu) * ivar * gamma.data() + beta.data();
  }
  Tensor out = make_tensor(a.shape(), std::move(y));
  record(out, {&a, &gamma, &beta},
         [an = a.node(), gn = gamma.node(), bn = beta.node(), rows, c,
          eps](const TensorNode& o) {
           for (long long r = 0; r < rows; ++r) {
             auto xi = an->value.segment(r * c, c);
             auto gy = o.grad.segment(r * c, c);
             const double mu = xi.mean();
             const double var = (xi - mu).square().mean();
             const double ivar = 1.0 / std::sqrt(var + eps);
             Eigen::ArrayXd xhat = (xi - mu) * ivar;
             if (gn->requires_grad) {
               ensure_grad(*gn);
               gn->grad += gy * xhat;
             }
             if (bn->requires_grad) {
               ensure_grad(*bn);
               bn->grad += gy;
             }
             if (an->requires_grad) {
               ensure_grad(*an);
               Eigen::ArrayXd dxhat = gy * gn->value;
               const double m1 = dxhat.mean();
               const double m2 = (dxhat * xhat).mean();
               an->grad.segment(r * c, c) += ivar * (dxhat - m1 - xhat * m2);
             }
           }
         });
  return out;
}

}  // namespace i2st
