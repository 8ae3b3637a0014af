#include "oat/network.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "oat/parallel.hpp"
#include "oat/rng.hpp"

namespace oat {

namespace detail {

enum class OpKind { Input, Conv, Upsample2x, Concat, Add };

struct Node {
  OpKind kind = OpKind::Input;
  int in0 = -1;
  int in1 = -1;
  // convolution attributes; rectifiers are fused into their convolution
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  bool relu = false;
  std::size_t w_offset = 0, b_offset = 0;
  // inferred output shape
  int c = 0, h = 0, w = 0;
};

struct Graph {
  NetworkConfig cfg;
  std::vector<Node> nodes;
  std::vector<LayerInfo> layout;
  std::size_t n_params = 0;
  int output = -1;

  static Graph build(const NetworkConfig& cfg);
};

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Convolutions run as im2col + GEMM on the forward and weight-gradient
// paths, where the reduction dimension is large, and as direct per-tap
// scatter on the input-gradient path, which is elementwise and cheap. All
// GEMM operands live in Eigen-owned buffers so operand alignment, and with
// it the kernel's tiling and rounding order, never depends on where the
// caller's vectors happened to be allocated; the scatter loops have a fixed
// traversal order. Together that keeps results bit-identical across runs
// and worker counts.

// gathers k x k patches into a (K x P) column-major matrix; interior columns
// take the branch-free path, borders fall back to per-element checks
void im2col(const Tensor& x, int k, int stride, int pad, int out_h, int out_w,
            Eigen::MatrixXd& col) {
  const int K = x.c * k * k;
  const int P = out_h * out_w;
  col.resize(K, P);

  auto gather_checked = [&](int oj, int oi) {
    double* dst = col.data() + static_cast<std::size_t>(oj * out_w + oi) * K;
    for (int c = 0; c < x.c; ++c) {
      const double* src = x.channel(c);
      for (int kj = 0; kj < k; ++kj) {
        const int sj = oj * stride + kj - pad;
        for (int ki = 0; ki < k; ++ki) {
          const int si = oi * stride + ki - pad;
          *dst++ = (si >= 0 && si < x.w && sj >= 0 && sj < x.h)
                       ? src[static_cast<std::size_t>(sj) * x.w + si]
                       : 0.0;
        }
      }
    }
  };

  for (int oj = 0; oj < out_h; ++oj) {
    int lo = 0;
    while (lo < out_w && lo * stride - pad < 0) ++lo;
    int hi = out_w;
    while (hi > lo && (hi - 1) * stride - pad + k > x.w) --hi;
    const bool rows_ok = oj * stride - pad >= 0 && oj * stride - pad + k <= x.h;
    if (!rows_ok) {
      for (int oi = 0; oi < out_w; ++oi) gather_checked(oj, oi);
      continue;
    }
    for (int oi = 0; oi < lo; ++oi) gather_checked(oj, oi);
    for (int oi = lo; oi < hi; ++oi) {
      double* dst = col.data() + static_cast<std::size_t>(oj * out_w + oi) * K;
      const int sj0 = oj * stride - pad;
      const int si0 = oi * stride - pad;
      for (int c = 0; c < x.c; ++c) {
        const double* src = x.channel(c) + static_cast<std::size_t>(sj0) * x.w + si0;
        for (int kj = 0; kj < k; ++kj) {
          for (int ki = 0; ki < k; ++ki) *dst++ = src[ki];
          src += x.w;
        }
      }
    }
    for (int oi = hi; oi < out_w; ++oi) gather_checked(oj, oi);
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvWorkspace {
  RowMat w, y, dy, dw;
  Eigen::MatrixXd col;
};

ConvWorkspace& workspace() {
  thread_local ConvWorkspace ws;
  return ws;
}

void conv_forward(const Node& n, const double* params, const Tensor& x, Tensor& y) {
  ConvWorkspace& ws = workspace();
  im2col(x, n.ksize, n.stride, n.pad, n.h, n.w, ws.col);
  const int K = n.in_ch * n.ksize * n.ksize;
  const int P = n.h * n.w;
  ws.w.resize(n.out_ch, K);
  std::copy(params + n.w_offset, params + n.w_offset + ws.w.size(), ws.w.data());
  ws.y.resize(n.out_ch, P);
  ws.y.noalias() = ws.w * ws.col;
  const double* bias = params + n.b_offset;
  for (int oc = 0; oc < n.out_ch; ++oc) {
    const double* src = ws.y.data() + static_cast<std::size_t>(oc) * P;
    double* dst = y.v.data() + static_cast<std::size_t>(oc) * P;
    if (n.relu) {
      for (int p = 0; p < P; ++p) {
        const double v = src[p] + bias[oc];
        dst[p] = v > 0.0 ? v : 0.0;
      }
    } else {
      for (int p = 0; p < P; ++p) dst[p] = src[p] + bias[oc];
    }
  }
}

// inclusive output window reached by kernel tap (kj, ki)
struct TapRange {
  int y0, y1, x0, x1;
};

TapRange tap_range(const Node& n, int in_h, int in_w, int kj, int ki) {
  const int s = n.stride;
  auto lo = [&](int kk) {
    const int num = n.pad - kk;
    return num <= 0 ? 0 : (num + s - 1) / s;
  };
  auto hi = [&](int kk, int in_dim, int out_dim) {
    return std::min(out_dim - 1, (in_dim - 1 - kk + n.pad) / s);
  };
  return {lo(kj), hi(kj, in_h, n.h), lo(ki), hi(ki, in_w, n.w)};
}

void conv_backward(const Node& n, const double* params, const Tensor& x, const Tensor& dy,
                   Tensor& dx, double* grad) {
  ConvWorkspace& ws = workspace();
  const int K = n.in_ch * n.ksize * n.ksize;
  const int P = n.h * n.w;

  // weight and bias gradients through the patch matrix
  ws.dy.resize(n.out_ch, P);
  std::copy(dy.v.begin(), dy.v.end(), ws.dy.data());
  im2col(x, n.ksize, n.stride, n.pad, n.h, n.w, ws.col);
  ws.dw.resize(n.out_ch, K);
  ws.dw.noalias() = ws.dy * ws.col.transpose();
  for (Eigen::Index i = 0; i < ws.dw.size(); ++i) grad[n.w_offset + i] += ws.dw.data()[i];
  for (int oc = 0; oc < n.out_ch; ++oc) grad[n.b_offset + oc] += ws.dy.row(oc).sum();

  // input gradient scattered tap by tap (elementwise, fixed order)
  const int s = n.stride;
  for (int c = 0; c < n.in_ch; ++c) {
    double* dxp = dx.channel(c);
    for (int oc = 0; oc < n.out_ch; ++oc) {
      const double* dsrc = dy.channel(oc);
      const double* w =
          params + n.w_offset +
          (static_cast<std::size_t>(oc) * n.in_ch + c) * n.ksize * n.ksize;
      for (int kj = 0; kj < n.ksize; ++kj) {
        for (int ki = 0; ki < n.ksize; ++ki) {
          const double wv = w[kj * n.ksize + ki];
          const TapRange r = tap_range(n, x.h, x.w, kj, ki);
          for (int oy = r.y0; oy <= r.y1; ++oy) {
            double* dxrow = dxp + static_cast<std::size_t>(oy * s + kj - n.pad) * x.w +
                            (r.x0 * s + ki - n.pad);
            const double* drow = dsrc + static_cast<std::size_t>(oy) * n.w + r.x0;
            const int count = r.x1 - r.x0 + 1;
            if (s == 1) {
              for (int i = 0; i < count; ++i) dxrow[i] += wv * drow[i];
            } else {
              for (int i = 0; i < count; ++i)
                dxrow[static_cast<std::size_t>(i) * s] += wv * drow[i];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Graph Graph::build(const NetworkConfig& cfg) {
  Graph g;
  g.cfg = cfg;

  auto out_shape = [&](int node) { return g.nodes[static_cast<std::size_t>(node)]; };

  auto add_param = [&](const std::string& name, std::vector<int> shape) {
    LayerInfo info;
    info.name = name;
    info.offset = g.n_params;
    info.shape = std::move(shape);
    info.count = 1;
    for (int d : info.shape) info.count *= static_cast<std::size_t>(d);
    g.n_params += info.count;
    g.layout.push_back(info);
    return info.offset;
  };

  auto conv = [&](int in, int out_ch, int k, int stride, bool relu,
                  const std::string& name) {
    const Node& src = out_shape(in);
    Node n;
    n.kind = OpKind::Conv;
    n.in0 = in;
    n.in_ch = src.c;
    n.out_ch = out_ch;
    n.ksize = k;
    n.stride = stride;
    n.pad = k / 2;
    n.relu = relu;
    n.w_offset = add_param(name + ".w", {out_ch, src.c, k, k});
    n.b_offset = add_param(name + ".b", {out_ch});
    n.c = out_ch;
    n.h = conv_out_dim(src.h, k, stride, n.pad);
    n.w = conv_out_dim(src.w, k, stride, n.pad);
    g.nodes.push_back(n);
    return static_cast<int>(g.nodes.size()) - 1;
  };
  auto concat = [&](int a, int b) {
    const Node& na = out_shape(a);
    const Node& nb = out_shape(b);
    Node n;
    n.kind = OpKind::Concat;
    n.in0 = a;
    n.in1 = b;
    n.c = na.c + nb.c;
    n.h = na.h;
    n.w = na.w;
    g.nodes.push_back(n);
    return static_cast<int>(g.nodes.size()) - 1;
  };
  auto upsample = [&](int in) {
    Node n = out_shape(in);
    n.kind = OpKind::Upsample2x;
    n.in0 = in;
    n.in1 = -1;
    n.h *= 2;
    n.w *= 2;
    g.nodes.push_back(n);
    return static_cast<int>(g.nodes.size()) - 1;
  };
  auto dense_block = [&](int in, const std::string& name) {
    int cur = in;
    for (int t = 0; t < cfg.dense_layers_per_block; ++t) {
      const int feat =
          conv(cur, cfg.dense_growth_rate, 3, 1, true, name + ".dense" + std::to_string(t));
      cur = concat(cur, feat);
    }
    return cur;
  };

  // input node
  Node input;
  input.kind = OpKind::Input;
  input.c = 1;
  input.h = cfg.input_size;
  input.w = cfg.input_size;
  g.nodes.push_back(input);

  int cur = conv(0, cfg.base_channels, 3, 1, true, "stem");
  std::vector<int> skips;
  for (int s = 0; s < cfg.n_scales; ++s) {
    cur = dense_block(cur, "enc" + std::to_string(s));
    if (s + 1 < cfg.n_scales) {
      skips.push_back(cur);
      cur = conv(cur, cfg.base_channels << (s + 1), 3, 2, true, "down" + std::to_string(s));
    }
  }
  for (int s = cfg.n_scales - 2; s >= 0; --s) {
    const int skip = skips[static_cast<std::size_t>(s)];
    cur = upsample(cur);
    cur = conv(cur, out_shape(skip).c, 3, 1, true, "up" + std::to_string(s));
    cur = concat(cur, skip);
    cur = dense_block(cur, "dec" + std::to_string(s));
  }
  const int head = conv(cur, 1, 1, 1, false, "head");

  Node residual;
  residual.kind = OpKind::Add;
  residual.in0 = head;
  residual.in1 = 0;
  residual.c = 1;
  residual.h = cfg.input_size;
  residual.w = cfg.input_size;
  g.nodes.push_back(residual);
  g.output = static_cast<int>(g.nodes.size()) - 1;
  return g;
}

struct TapeState {
  Graph graph;
  std::vector<double> params;
  std::vector<std::vector<Tensor>> acts;  // [example][node]
  bool consumed = false;

  static TapeState* get(Tape& tape) { return tape.state_.get(); }
  static void set(Tape& tape, std::unique_ptr<TapeState> s) { tape.state_ = std::move(s); }
};

namespace {

void run_forward_example(const Graph& g, const double* params, const Tensor& input,
                         std::vector<Tensor>& acts) {
  acts.resize(g.nodes.size());
  for (std::size_t n = 0; n < g.nodes.size(); ++n) {
    const Node& node = g.nodes[n];
    Tensor& out = acts[n];
    switch (node.kind) {
      case OpKind::Input:
        out = input;
        break;
      case OpKind::Conv: {
        out = Tensor::uninitialized(node.c, node.h, node.w);
        conv_forward(node, params, acts[static_cast<std::size_t>(node.in0)], out);
        break;
      }
      case OpKind::Upsample2x: {
        const Tensor& x = acts[static_cast<std::size_t>(node.in0)];
        out = Tensor::uninitialized(node.c, node.h, node.w);
        for (int c = 0; c < x.c; ++c) {
          const double* src = x.channel(c);
          double* dst = out.channel(c);
          for (int j = 0; j < x.h; ++j)
            for (int i = 0; i < x.w; ++i) {
              const double v = src[static_cast<std::size_t>(j) * x.w + i];
              const std::size_t base = static_cast<std::size_t>(2 * j) * node.w + 2 * i;
              dst[base] = v;
              dst[base + 1] = v;
              dst[base + node.w] = v;
              dst[base + node.w + 1] = v;
            }
        }
        break;
      }
      case OpKind::Concat: {
        const Tensor& a = acts[static_cast<std::size_t>(node.in0)];
        const Tensor& b = acts[static_cast<std::size_t>(node.in1)];
        out = Tensor::uninitialized(node.c, node.h, node.w);
        std::copy(a.v.begin(), a.v.end(), out.v.begin());
        std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
        break;
      }
      case OpKind::Add: {
        const Tensor& a = acts[static_cast<std::size_t>(node.in0)];
        const Tensor& b = acts[static_cast<std::size_t>(node.in1)];
        out = Tensor::uninitialized(node.c, node.h, node.w);
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = a.v[i] + b.v[i];
        break;
      }
    }
  }
}

void run_backward_example(const Graph& g, const double* params,
                          const std::vector<Tensor>& acts, const Tensor& grad_out,
                          double* grad_params) {
  std::vector<Tensor> grads(g.nodes.size());
  auto ensure = [&](int idx) -> Tensor& {
    Tensor& t = grads[static_cast<std::size_t>(idx)];
    if (t.v.empty()) {
      const Node& n = g.nodes[static_cast<std::size_t>(idx)];
      t = Tensor(n.c, n.h, n.w);
    }
    return t;
  };

  grads[static_cast<std::size_t>(g.output)] = grad_out;

  for (int n = static_cast<int>(g.nodes.size()) - 1; n >= 0; --n) {
    const Node& node = g.nodes[static_cast<std::size_t>(n)];
    Tensor& dy = grads[static_cast<std::size_t>(n)];
    if (dy.v.empty()) continue;  // node does not influence the output
    switch (node.kind) {
      case OpKind::Input:
        break;
      case OpKind::Conv: {
        if (node.relu) {
          // rectifier subgradient at zero is zero; the stored activation is
          // post-rectifier, so its sign is the gate
          const Tensor& y = acts[static_cast<std::size_t>(n)];
          for (std::size_t i = 0; i < y.size(); ++i)
            if (y.v[i] <= 0.0) dy.v[i] = 0.0;
        }
        conv_backward(node, params, acts[static_cast<std::size_t>(node.in0)], dy,
                      ensure(node.in0), grad_params);
        break;
      }
      case OpKind::Upsample2x: {
        Tensor& dx = ensure(node.in0);
        for (int c = 0; c < dx.c; ++c) {
          const double* src = dy.channel(c);
          double* dst = dx.channel(c);
          for (int j = 0; j < dx.h; ++j)
            for (int i = 0; i < dx.w; ++i) {
              const std::size_t base = static_cast<std::size_t>(2 * j) * node.w + 2 * i;
              dst[static_cast<std::size_t>(j) * dx.w + i] +=
                  src[base] + src[base + 1] + src[base + node.w] + src[base + node.w + 1];
            }
        }
        break;
      }
      case OpKind::Concat: {
        Tensor& da = ensure(node.in0);
        Tensor& db = ensure(node.in1);
        for (std::size_t i = 0; i < da.size(); ++i) da.v[i] += dy.v[i];
        const double* tail = dy.v.data() + da.size();
        for (std::size_t i = 0; i < db.size(); ++i) db.v[i] += tail[i];
        break;
      }
      case OpKind::Add: {
        Tensor& da = ensure(node.in0);
        Tensor& db = ensure(node.in1);
        for (std::size_t i = 0; i < da.size(); ++i) da.v[i] += dy.v[i];
        for (std::size_t i = 0; i < db.size(); ++i) db.v[i] += dy.v[i];
        break;
      }
    }
    if (n != 0) dy = Tensor();  // free as we go
  }
}

void check_batch(const NetworkConfig& cfg, const std::vector<Tensor>& batch) {
  for (const auto& t : batch)
    if (t.c != 1 || t.h != cfg.input_size || t.w != cfg.input_size)
      throw std::invalid_argument("forward: batch tensor does not match config input size");
}

}  // namespace

}  // namespace detail

using detail::Graph;
using detail::TapeState;

Tape::Tape() = default;
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

bool Tape::recorded() const { return state_ != nullptr; }
bool Tape::consumed() const { return state_ != nullptr && state_->consumed; }

void validate(const NetworkConfig& config) {
  if (config.n_scales < 1) throw std::invalid_argument("NetworkConfig: n_scales must be >= 1");
  if (config.base_channels < 1 || config.dense_growth_rate < 1 ||
      config.dense_layers_per_block < 1)
    throw std::invalid_argument("NetworkConfig: channel counts must be >= 1");
  if (config.input_size < 2)
    throw std::invalid_argument("NetworkConfig: input_size must be >= 2");
  const int factor = 1 << (config.n_scales - 1);
  if (config.input_size % factor != 0)
    throw std::invalid_argument(
        "NetworkConfig: input side must be divisible by 2^(n_scales-1)");
}

std::size_t parameter_count(const NetworkConfig& config) {
  validate(config);
  return Graph::build(config).n_params;
}

ParameterSet init_network(const NetworkConfig& config, std::uint64_t seed) {
  validate(config);
  const Graph g = Graph::build(config);
  ParameterSet params;
  params.layout = g.layout;
  params.values.assign(g.n_params, 0.0);

  Rng rng(seed);
  for (const auto& info : g.layout) {
    if (info.shape.size() == 1) continue;  // biases stay zero
    const double fan_in = static_cast<double>(info.shape[1]) * info.shape[2] * info.shape[3];
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < info.count; ++i)
      params.values[info.offset + i] = rng.gaussian(0.0, stddev);
  }
  return params;
}

ForwardResult forward(const ParameterSet& params, const NetworkConfig& config,
                      const std::vector<Tensor>& batch, bool record_tape, int threads) {
  validate(config);
  detail::check_batch(config, batch);
  Graph g = Graph::build(config);
  if (params.values.size() != g.n_params)
    throw std::invalid_argument("forward: parameter vector does not match the config");

  ForwardResult result;
  result.outputs.resize(batch.size());
  std::vector<std::vector<Tensor>> acts(batch.size());
  parallel_for(static_cast<int>(batch.size()), threads, [&](int i) {
    detail::run_forward_example(g, params.values.data(), batch[static_cast<std::size_t>(i)],
                                acts[static_cast<std::size_t>(i)]);
    result.outputs[static_cast<std::size_t>(i)] =
        acts[static_cast<std::size_t>(i)][static_cast<std::size_t>(g.output)];
  });

  if (record_tape) {
    auto state = std::make_unique<TapeState>();
    state->graph = std::move(g);
    state->params = params.values;
    state->acts = std::move(acts);
    TapeState::set(result.tape, std::move(state));
  }
  return result;
}

std::vector<Tensor> predict(const ParameterSet& params, const NetworkConfig& config,
                            const std::vector<Tensor>& batch, int threads) {
  return forward(params, config, batch, false, threads).outputs;
}

GradientSet backward(Tape& tape, const std::vector<Tensor>& grad_output, int threads) {
  TapeState* state = TapeState::get(tape);
  if (state == nullptr) throw std::logic_error("backward: tape holds no recorded forward");
  if (state->consumed) throw std::logic_error("backward: tape already consumed");
  if (grad_output.size() != state->acts.size())
    throw std::invalid_argument("backward: gradient batch size mismatch");
  const Graph& g = state->graph;
  for (const auto& t : grad_output)
    if (t.c != 1 || t.h != g.cfg.input_size || t.w != g.cfg.input_size)
      throw std::invalid_argument("backward: gradient tensor shape mismatch");

  const int n_examples = static_cast<int>(grad_output.size());
  std::vector<std::vector<double>> partial(static_cast<std::size_t>(n_examples));
  parallel_for(n_examples, threads, [&](int i) {
    auto& mine = partial[static_cast<std::size_t>(i)];
    mine.assign(g.n_params, 0.0);
    detail::run_backward_example(g, state->params.data(),
                                 state->acts[static_cast<std::size_t>(i)],
                                 grad_output[static_cast<std::size_t>(i)], mine.data());
  });

  GradientSet grad;
  grad.values.assign(g.n_params, 0.0);
  for (int i = 0; i < n_examples; ++i) {  // fixed summation order
    const auto& mine = partial[static_cast<std::size_t>(i)];
    for (std::size_t p = 0; p < grad.values.size(); ++p) grad.values[p] += mine[p];
  }
  state->consumed = true;
  state->acts.clear();
  return grad;
}

LossResult mse_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("mse_loss: batch size mismatch");
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty batch");

  LossResult result;
  result.grad.resize(pred.size());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i].same_shape(target[i]))
      throw std::invalid_argument("mse_loss: tensor shape mismatch");
    Tensor& g = result.grad[i];
    g = Tensor(pred[i].c, pred[i].h, pred[i].w);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const double diff = pred[i].v[p] - target[i].v[p];
      result.value += diff * diff * inv_n;
      g.v[p] = 2.0 * diff * inv_n;
    }
  }
  return result;
}

}  // namespace oat
