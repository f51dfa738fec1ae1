#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avfdae/error.hpp"
#include "avfdae/rng.hpp"

namespace avfdae::nn {

// Batches are column-major matrices with one sample per column. Conv
// features are channel-major: element (c, t) sits at row c * length + t.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
// Packet-aligned storage: Eigen peels unaligned heads off vectorized loops,
// so a heap-dependent base address would change the rounding run to run.
template <typename Scalar>
using ParamVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

enum class ActKind { LeakyRelu, Relu, Identity };

struct Activation {
  ActKind kind = ActKind::Identity;
  double slope = 0.01;  // LeakyRelu only

  static Activation leaky(double slope = 0.01) {
    if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("LeakyReLU slope must be in (0,1)");
    return {ActKind::LeakyRelu, slope};
  }
  static Activation relu() { return {ActKind::Relu, 0.0}; }
  static Activation identity() { return {ActKind::Identity, 0.0}; }

  double negative_gain() const {
    switch (kind) {
      case ActKind::LeakyRelu: return slope;
      case ActKind::Relu: return 0.0;
      case ActKind::Identity: return 1.0;
    }
    return 1.0;
  }
};

enum class OpType { Dense, Conv1d, MaxPool1d, Upsample1d, Act };

struct Op {
  OpType type = OpType::Dense;
  int in_ch = 0;   // Dense: input width; Act: width
  int out_ch = 0;  // Dense: output width
  int length = 0;  // temporal length at the op input
  int kernel = 0;
  Activation act;
  std::size_t w_off = 0, b_off = 0;

  std::size_t in_width() const {
    switch (type) {
      case OpType::Dense:
      case OpType::Act: return static_cast<std::size_t>(in_ch);
      default: return static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(length);
    }
  }
  std::size_t out_width() const {
    switch (type) {
      case OpType::Dense: return static_cast<std::size_t>(out_ch);
      case OpType::Act: return static_cast<std::size_t>(in_ch);
      case OpType::Conv1d: return static_cast<std::size_t>(out_ch) * static_cast<std::size_t>(length);
      case OpType::MaxPool1d: return static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(length / 2);
      case OpType::Upsample1d: return static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(length * 2);
    }
    return 0;
  }
  std::size_t weight_count() const {
    if (type == OpType::Dense) return static_cast<std::size_t>(out_ch) * static_cast<std::size_t>(in_ch);
    if (type == OpType::Conv1d)
      return static_cast<std::size_t>(out_ch) * static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(kernel);
    return 0;
  }
  std::size_t bias_count() const {
    return (type == OpType::Dense || type == OpType::Conv1d) ? static_cast<std::size_t>(out_ch) : 0;
  }
  bool has_params() const { return bias_count() > 0; }
};

template <typename Scalar>
struct Trace {
  std::vector<Mat<Scalar>> inputs;
  std::vector<std::vector<int>> argmax;  // per MaxPool op, flattened (out_width x batch)
};

// A stack of ops whose parameters live in an external flat buffer.
class Network {
 public:
  std::vector<Op> ops;

  std::size_t in_width() const { return ops.empty() ? 0 : ops.front().in_width(); }
  std::size_t out_width() const { return ops.empty() ? 0 : ops.back().out_width(); }

  template <typename Scalar>
  Mat<Scalar> forward(const Scalar* params, const Mat<Scalar>& x, Trace<Scalar>* trace = nullptr) const {
    if (static_cast<std::size_t>(x.rows()) != in_width())
      throw DataError("network input width " + std::to_string(x.rows()) + " != expected " + std::to_string(in_width()));
    if (trace) {
      trace->inputs.clear();
      trace->argmax.clear();
    }
    Mat<Scalar> cur = x;
    for (const Op& op : ops) {
      Mat<Scalar> next = apply(op, params, cur, trace);
      if (trace) trace->inputs.push_back(std::move(cur));
      cur = std::move(next);
    }
    return cur;
  }

  // Accumulates parameter gradients into grads; returns dL/dx (empty matrix
  // when input_grad is false).
  template <typename Scalar>
  Mat<Scalar> backward(const Scalar* params, Scalar* grads, const Mat<Scalar>& dy, const Trace<Scalar>& trace,
                       bool input_grad = true) const {
    Mat<Scalar> g = dy;
    std::size_t pool_idx = trace.argmax.size();
    for (std::size_t i = ops.size(); i-- > 0;) {
      const Op& op = ops[i];
      const bool need_dx = input_grad || i > 0;
      if (op.type == OpType::MaxPool1d) --pool_idx;
      g = back(op, params, grads, trace.inputs[i], g, need_dx, op.type == OpType::MaxPool1d ? &trace.argmax[pool_idx] : nullptr);
      if (!need_dx) return {};
    }
    return g;
  }

 private:
  template <typename Scalar>
  static Mat<Scalar> apply(const Op& op, const Scalar* params, const Mat<Scalar>& x, Trace<Scalar>* trace) {
    const Eigen::Index batch = x.cols();
    switch (op.type) {
      case OpType::Dense: {
        Eigen::Map<const Mat<Scalar>> w(params + op.w_off, op.out_ch, op.in_ch);
        Eigen::Map<const Vec<Scalar>> b(params + op.b_off, op.out_ch);
        Mat<Scalar> y(op.out_ch, batch);
        y.noalias() = w * x;
        y.colwise() += b;
        return y;
      }
      case OpType::Act: {
        if (op.act.kind == ActKind::Identity) return x;
        const auto gain = static_cast<Scalar>(op.act.negative_gain());
        return x.unaryExpr([gain](Scalar v) { return v > Scalar(0) ? v : gain * v; });
      }
      case OpType::Conv1d: {
        const auto cols = im2col(op, x);
        Eigen::Map<const Mat<Scalar>> w(params + op.w_off, op.out_ch, op.in_ch * op.kernel);
        Eigen::Map<const Vec<Scalar>> b(params + op.b_off, op.out_ch);
        Mat<Scalar> prod(cols.rows(), op.out_ch);  // (batch*T) x Cout
        prod.noalias() = cols * w.transpose();
        prod.rowwise() += b.transpose();
        const Eigen::Index t_len = op.length;
        Mat<Scalar> y(op.out_width(), batch);
        for (Eigen::Index s = 0; s < batch; ++s)
          for (Eigen::Index c = 0; c < op.out_ch; ++c) y.col(s).segment(c * t_len, t_len) = prod.col(c).segment(s * t_len, t_len);
        return y;
      }
      case OpType::MaxPool1d: {
        const int t_out = op.length / 2;
        Mat<Scalar> y(op.out_width(), batch);
        std::vector<int> arg(static_cast<std::size_t>(y.size()));
        for (Eigen::Index s = 0; s < batch; ++s)
          for (int c = 0; c < op.in_ch; ++c)
            for (int t = 0; t < t_out; ++t) {
              const Eigen::Index i0 = static_cast<Eigen::Index>(c) * op.length + 2 * t;
              const bool second = x(i0 + 1, s) > x(i0, s);
              const Eigen::Index o = static_cast<Eigen::Index>(c) * t_out + t;
              y(o, s) = second ? x(i0 + 1, s) : x(i0, s);
              arg[static_cast<std::size_t>(s * y.rows() + o)] = static_cast<int>(second ? i0 + 1 : i0);
            }
        if (trace) trace->argmax.push_back(std::move(arg));
        return y;
      }
      case OpType::Upsample1d: {
        Mat<Scalar> y(op.out_width(), batch);
        const Eigen::Index t_in = op.length;
        for (Eigen::Index s = 0; s < batch; ++s)
          for (Eigen::Index c = 0; c < op.in_ch; ++c)
            for (Eigen::Index t = 0; t < t_in; ++t) {
              const Scalar v = x(c * t_in + t, s);
              y(c * 2 * t_in + 2 * t, s) = v;
              y(c * 2 * t_in + 2 * t + 1, s) = v;
            }
        return y;
      }
    }
    return x;
  }

  // Rows: (sample, t); columns: (c, k). Same padding, stride 1.
  template <typename Scalar>
  static Mat<Scalar> im2col(const Op& op, const Mat<Scalar>& x) {
    const Eigen::Index t_len = op.length, batch = x.cols();
    const int pad = op.kernel / 2;
    Mat<Scalar> cols = Mat<Scalar>::Zero(batch * t_len, static_cast<Eigen::Index>(op.in_ch) * op.kernel);
    for (Eigen::Index s = 0; s < batch; ++s)
      for (Eigen::Index c = 0; c < op.in_ch; ++c)
        for (int k = 0; k < op.kernel; ++k) {
          const Eigen::Index shift = k - pad;
          const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
          const Eigen::Index hi = std::min<Eigen::Index>(t_len, t_len - shift);
          if (hi <= lo) continue;
          cols.col(c * op.kernel + k).segment(s * t_len + lo, hi - lo) = x.col(s).segment(c * t_len + lo + shift, hi - lo);
        }
    return cols;
  }

  template <typename Scalar>
  static Mat<Scalar> back(const Op& op, const Scalar* params, Scalar* grads, const Mat<Scalar>& x, const Mat<Scalar>& dy,
                          bool need_dx, const std::vector<int>* argmax) {
    const Eigen::Index batch = x.cols();
    switch (op.type) {
      case OpType::Dense: {
        Eigen::Map<const Mat<Scalar>> w(params + op.w_off, op.out_ch, op.in_ch);
        Eigen::Map<Mat<Scalar>> gw(grads + op.w_off, op.out_ch, op.in_ch);
        Eigen::Map<Vec<Scalar>> gb(grads + op.b_off, op.out_ch);
        gw.noalias() += dy * x.transpose();
        gb.noalias() += dy.rowwise().sum();
        if (!need_dx) return {};
        Mat<Scalar> dx(op.in_ch, batch);
        dx.noalias() = w.transpose() * dy;
        return dx;
      }
      case OpType::Act: {
        if (op.act.kind == ActKind::Identity) return dy;
        const auto gain = static_cast<Scalar>(op.act.negative_gain());
        return dy.binaryExpr(x, [gain](Scalar g, Scalar v) { return v > Scalar(0) ? g : gain * g; });
      }
      case OpType::Conv1d: {
        const Eigen::Index t_len = op.length;
        const auto cols = im2col(op, x);
        Mat<Scalar> dprod(batch * t_len, op.out_ch);
        for (Eigen::Index s = 0; s < batch; ++s)
          for (Eigen::Index c = 0; c < op.out_ch; ++c) dprod.col(c).segment(s * t_len, t_len) = dy.col(s).segment(c * t_len, t_len);
        Eigen::Map<const Mat<Scalar>> w(params + op.w_off, op.out_ch, op.in_ch * op.kernel);
        Eigen::Map<Mat<Scalar>> gw(grads + op.w_off, op.out_ch, op.in_ch * op.kernel);
        Eigen::Map<Vec<Scalar>> gb(grads + op.b_off, op.out_ch);
        gw.noalias() += dprod.transpose() * cols;
        gb.noalias() += dprod.colwise().sum().transpose();
        if (!need_dx) return {};
        Mat<Scalar> dcols(dprod.rows(), w.cols());
        dcols.noalias() = dprod * w;
        const int pad = op.kernel / 2;
        Mat<Scalar> dx = Mat<Scalar>::Zero(op.in_width(), batch);
        for (Eigen::Index s = 0; s < batch; ++s)
          for (Eigen::Index c = 0; c < op.in_ch; ++c)
            for (int k = 0; k < op.kernel; ++k) {
              const Eigen::Index shift = k - pad;
              const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
              const Eigen::Index hi = std::min<Eigen::Index>(t_len, t_len - shift);
              if (hi <= lo) continue;
              dx.col(s).segment(c * t_len + lo + shift, hi - lo) += dcols.col(c * op.kernel + k).segment(s * t_len + lo, hi - lo);
            }
        return dx;
      }
      case OpType::MaxPool1d: {
        Mat<Scalar> dx = Mat<Scalar>::Zero(x.rows(), batch);
        for (Eigen::Index s = 0; s < batch; ++s)
          for (Eigen::Index o = 0; o < dy.rows(); ++o) dx((*argmax)[static_cast<std::size_t>(s * dy.rows() + o)], s) += dy(o, s);
        return dx;
      }
      case OpType::Upsample1d: {
        Mat<Scalar> dx(x.rows(), batch);
        const Eigen::Index t_in = op.length;
        for (Eigen::Index s = 0; s < batch; ++s)
          for (Eigen::Index c = 0; c < op.in_ch; ++c)
            for (Eigen::Index t = 0; t < t_in; ++t)
              dx(c * t_in + t, s) = dy(c * 2 * t_in + 2 * t, s) + dy(c * 2 * t_in + 2 * t + 1, s);
        return dx;
      }
    }
    return dy;
  }
};

// ---------------------------------------------------------------------------
// Autoencoder

enum class Arch { Dense = 0, Conv1D = 1 };

struct ArchSpec {
  Arch arch = Arch::Dense;
  int input_width = 0;          // Dense: features; Conv1D: temporal length
  int input_channels = 1;       // Conv1D only
  std::vector<int> widths{5000, 1000, 100};  // Dense encoder widths, or Conv1D encoder filters
  int kernel = 3;
  double leaky_slope = 0.01;
};

inline ArchSpec dense_spec(int input_width, std::vector<int> widths = {5000, 1000, 100}, double slope = 0.01) {
  return {Arch::Dense, input_width, 1, std::move(widths), 3, slope};
}

inline ArchSpec conv_spec(int channels, int length, std::vector<int> filters = {64, 32, 16}, int kernel = 3) {
  return {Arch::Conv1D, length, channels, std::move(filters), kernel, 0.01};
}

template <typename Scalar>
struct AutoencoderModel {
  ArchSpec spec;
  Network encoder;
  Network decoder;
  ParamVector<Scalar> params;

  std::size_t input_width() const { return encoder.in_width(); }
  std::size_t latent_dim() const { return encoder.out_width(); }
  std::size_t param_count() const { return params.size(); }
};

namespace detail {

struct Builder {
  std::size_t next = 0;
  void dense(Network& net, int in, int out) {
    Op op;
    op.type = OpType::Dense;
    op.in_ch = in;
    op.out_ch = out;
    place(op);
    net.ops.push_back(op);
  }
  void conv(Network& net, int in_ch, int out_ch, int length, int kernel) {
    Op op;
    op.type = OpType::Conv1d;
    op.in_ch = in_ch;
    op.out_ch = out_ch;
    op.length = length;
    op.kernel = kernel;
    place(op);
    net.ops.push_back(op);
  }
  static void act(Network& net, int width, Activation a) {
    Op op;
    op.type = OpType::Act;
    op.in_ch = width;
    op.act = a;
    net.ops.push_back(op);
  }
  static void pool(Network& net, int ch, int length) {
    Op op;
    op.type = OpType::MaxPool1d;
    op.in_ch = ch;
    op.length = length;
    net.ops.push_back(op);
  }
  static void upsample(Network& net, int ch, int length) {
    Op op;
    op.type = OpType::Upsample1d;
    op.in_ch = ch;
    op.length = length;
    net.ops.push_back(op);
  }
  void place(Op& op) {
    op.w_off = next;
    next += op.weight_count();
    op.b_off = next;
    next += op.bias_count();
  }
};

}  // namespace detail

// Uniform fan-in initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero bias.
template <typename Scalar>
void init_params(AutoencoderModel<Scalar>& m, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1417));
  std::fill(m.params.begin(), m.params.end(), Scalar(0));
  for (const Network* net : {&m.encoder, &m.decoder})
    for (const Op& op : net->ops) {
      if (!op.has_params()) continue;
      const double fan_in = op.type == OpType::Dense ? op.in_ch : double(op.in_ch) * op.kernel;
      std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
      for (std::size_t i = 0; i < op.weight_count(); ++i) m.params[op.w_off + i] = static_cast<Scalar>(u(rng));
    }
}

// Dense: encoder in -> widths..., LeakyReLU after every layer; decoder mirrors
// the hidden widths back and ends with an identity projection to the input.
// Conv1D: [conv, ReLU, maxpool] per encoder filter count; decoder is
// [upsample, conv, ReLU] per mirrored count plus an identity conv back to the
// input channels.
template <typename Scalar>
AutoencoderModel<Scalar> make_autoencoder(const ArchSpec& spec, std::uint64_t seed) {
  if (spec.widths.empty()) throw ConfigError("autoencoder needs at least one encoder layer");
  if (spec.input_width <= 0 || spec.input_channels <= 0) throw ConfigError("autoencoder input must be non-empty");
  AutoencoderModel<Scalar> m;
  m.spec = spec;
  detail::Builder b;
  if (spec.arch == Arch::Dense) {
    const auto act = Activation::leaky(spec.leaky_slope);
    int prev = spec.input_width;
    for (int w : spec.widths) {
      b.dense(m.encoder, prev, w);
      detail::Builder::act(m.encoder, w, act);
      prev = w;
    }
    for (std::size_t i = spec.widths.size() - 1; i-- > 0;) {
      b.dense(m.decoder, prev, spec.widths[i]);
      detail::Builder::act(m.decoder, spec.widths[i], act);
      prev = spec.widths[i];
    }
    b.dense(m.decoder, prev, spec.input_width);
  } else {
    const int stages = static_cast<int>(spec.widths.size());
    if (spec.input_width % (1 << stages) != 0)
      throw ConfigError("conv autoencoder length " + std::to_string(spec.input_width) + " is not divisible by " +
                        std::to_string(1 << stages));
    int ch = spec.input_channels, len = spec.input_width;
    for (int f : spec.widths) {
      b.conv(m.encoder, ch, f, len, spec.kernel);
      detail::Builder::act(m.encoder, f * len, Activation::relu());
      detail::Builder::pool(m.encoder, f, len);
      ch = f;
      len /= 2;
    }
    for (auto it = spec.widths.rbegin(); it != spec.widths.rend(); ++it) {
      detail::Builder::upsample(m.decoder, ch, len);
      len *= 2;
      b.conv(m.decoder, ch, *it, len, spec.kernel);
      detail::Builder::act(m.decoder, *it * len, Activation::relu());
      ch = *it;
    }
    b.conv(m.decoder, ch, spec.input_channels, len, spec.kernel);
  }
  m.params.assign(b.next, Scalar(0));
  init_params(m, seed);
  return m;
}

template <typename Scalar>
Mat<Scalar> encode(const AutoencoderModel<Scalar>& m, const Mat<Scalar>& x) {
  return m.encoder.forward(m.params.data(), x);
}

template <typename Scalar>
Mat<Scalar> decode(const AutoencoderModel<Scalar>& m, const Mat<Scalar>& z) {
  if (static_cast<std::size_t>(z.rows()) != m.latent_dim())
    throw DataError("latent dim " + std::to_string(z.rows()) + " != bottleneck " + std::to_string(m.latent_dim()));
  return m.decoder.forward(m.params.data(), z);
}

template <typename Scalar>
Mat<Scalar> reconstruct(const AutoencoderModel<Scalar>& m, const Mat<Scalar>& x) {
  return decode(m, encode(m, x));
}

template <typename Derived1, typename Derived2>
double mse(const Eigen::MatrixBase<Derived1>& prediction, const Eigen::MatrixBase<Derived2>& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw DataError("mse: shape mismatch");
  if (prediction.size() == 0) return 0.0;
  return (prediction.template cast<double>() - target.template cast<double>()).squaredNorm() /
         static_cast<double>(prediction.size());
}

template <typename Scalar>
struct Gradients {
  ParamVector<Scalar> values;
  double loss = 0.0;

  double max_abs() const {
    double m = 0.0;
    for (Scalar v : values) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }
};

// Exact gradients of the batch-mean MSE (mean over every element of every
// sample) with respect to all parameters.
template <typename Scalar>
Gradients<Scalar> backward(const AutoencoderModel<Scalar>& m, const Mat<Scalar>& inputs, const Mat<Scalar>& targets) {
  if (inputs.cols() != targets.cols() || static_cast<std::size_t>(targets.rows()) != m.input_width())
    throw DataError("backward: input/target shape mismatch");
  Trace<Scalar> enc_trace, dec_trace;
  const Mat<Scalar> z = m.encoder.forward(m.params.data(), inputs, &enc_trace);
  const Mat<Scalar> y = m.decoder.forward(m.params.data(), z, &dec_trace);
  Gradients<Scalar> g;
  g.values.assign(m.params.size(), Scalar(0));
  const Mat<Scalar> residual = y - targets;
  g.loss = static_cast<double>(residual.template cast<double>().squaredNorm()) / static_cast<double>(residual.size());
  const Mat<Scalar> dy = residual * static_cast<Scalar>(2.0 / static_cast<double>(residual.size()));
  const Mat<Scalar> dz = m.decoder.backward(m.params.data(), g.values.data(), dy, dec_trace, true);
  m.encoder.backward(m.params.data(), g.values.data(), dz, enc_trace, false);
  return g;
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct AdamState {
  std::uint64_t step = 0;
  ParamVector<Scalar> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lr = 1e-3;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate) : m(n, Scalar(0)), v(n, Scalar(0)), lr(learning_rate) {}
};

template <typename Scalar>
void adam_update(AdamState<Scalar>& s, std::span<Scalar> params, std::span<const Scalar> grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw DataError("adam: parameter/gradient/state sizes differ");
  ++s.step;
  const double t = static_cast<double>(s.step);
  const auto b1 = static_cast<Scalar>(s.beta1), b2 = static_cast<Scalar>(s.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - s.beta1), c2 = static_cast<Scalar>(1.0 - s.beta2);
  const auto step = static_cast<Scalar>(s.lr / (1.0 - std::pow(s.beta1, t)));
  const auto v_corr = static_cast<Scalar>(1.0 / (1.0 - std::pow(s.beta2, t)));
  const auto eps = static_cast<Scalar>(s.eps);
  Eigen::Map<Vec<Scalar>> p(params.data(), static_cast<Eigen::Index>(params.size()));
  Eigen::Map<const Vec<Scalar>> g(grads.data(), static_cast<Eigen::Index>(grads.size()));
  Eigen::Map<Vec<Scalar>> m(s.m.data(), static_cast<Eigen::Index>(s.m.size()));
  Eigen::Map<Vec<Scalar>> v(s.v.data(), static_cast<Eigen::Index>(s.v.size()));
  m = b1 * m + c1 * g;
  v = b2 * v + c2 * g.cwiseAbs2();
  p.array() -= step * m.array() / ((v.array() * v_corr).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Training

enum class TrainScheme { CleanToClean, NoisyToNoisy, NoisyToClean };

inline const char* to_string(TrainScheme s) {
  switch (s) {
    case TrainScheme::CleanToClean: return "clean-to-clean";
    case TrainScheme::NoisyToNoisy: return "noisy-to-noisy";
    case TrainScheme::NoisyToClean: return "noisy-to-clean";
  }
  return "?";
}

// Inputs are columns of `inputs`. Under NoisyToClean, target_index[i] names
// the column of `targets` holding the clean version of input i; the other
// schemes reconstruct the input itself.
template <typename Scalar>
struct TrainingSet {
  Mat<Scalar> inputs;
  Mat<Scalar> targets;
  std::vector<std::size_t> target_index;

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

struct TrainOptions {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;  // per-epoch mean training loss
};

template <typename Scalar>
TrainResult train(AutoencoderModel<Scalar>& model, const TrainingSet<Scalar>& data, TrainScheme scheme,
                  const TrainOptions& opt, std::ostream* progress = nullptr) {
  TrainResult result;
  if (opt.epochs <= 0) return result;
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (opt.batch_size <= 0) throw ConfigError("train: batch size must be positive");
  const bool paired = scheme == TrainScheme::NoisyToClean;
  if (paired) {
    if (data.target_index.size() != data.size()) throw DataError("train: noisy-to-clean needs a target for every input");
    for (auto t : data.target_index)
      if (t >= static_cast<std::size_t>(data.targets.cols())) throw DataError("train: target index out of range");
  }

  AdamState<Scalar> adam(model.params.size(), opt.learning_rate);
  std::vector<std::size_t> order(data.size());
  const auto width = static_cast<Eigen::Index>(model.input_width());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      const auto n = static_cast<Eigen::Index>(end - start);
      Mat<Scalar> x(width, n), y(width, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const std::size_t idx = order[start + static_cast<std::size_t>(j)];
        x.col(j) = data.inputs.col(static_cast<Eigen::Index>(idx));
        if (paired) y.col(j) = data.targets.col(static_cast<Eigen::Index>(data.target_index[idx]));
        else y.col(j) = x.col(j);
      }
      auto g = backward(model, x, y);
      if (!std::isfinite(g.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batches << " (max |grad| = " << g.max_abs() << ")";
        throw NumericError(msg.str());
      }
      adam_update<Scalar>(adam, model.params, g.values);
      loss_sum += g.loss;
      ++batches;
    }
    result.loss_curve.push_back(loss_sum / static_cast<double>(batches));
    if (progress) *progress << "  epoch " << epoch + 1 << "/" << opt.epochs << " loss " << result.loss_curve.back() << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: "AVFDAECK" | u32 version | u32 arch | i32 input_width |
// i32 input_channels | i32 kernel | f64 slope | u32 n_widths | i32 widths[] |
// u64 n_params | f32 params[] | u32 n_config | config bytes. Little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}
template <typename T>
void put(std::string& out, T v) {
  put_bytes(out, &v, sizeof v);
}
template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace detail

template <typename Scalar>
std::string serialize_checkpoint(const AutoencoderModel<Scalar>& m, const std::string& config_json) {
  std::string out = "AVFDAECK";
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.spec.arch));
  detail::put<std::int32_t>(out, m.spec.input_width);
  detail::put<std::int32_t>(out, m.spec.input_channels);
  detail::put<std::int32_t>(out, m.spec.kernel);
  detail::put<double>(out, m.spec.leaky_slope);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.spec.widths.size()));
  for (int w : m.spec.widths) detail::put<std::int32_t>(out, w);
  detail::put<std::uint64_t>(out, m.params.size());
  for (Scalar v : m.params) detail::put<float>(out, static_cast<float>(v));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(config_json.size()));
  out += config_json;
  return out;
}

template <typename Scalar>
AutoencoderModel<Scalar> deserialize_checkpoint(const std::string& bytes, std::string* config_json = nullptr) {
  if (bytes.size() < 8 || bytes.compare(0, 8, "AVFDAECK") != 0) throw DataError("not a checkpoint file");
  std::size_t pos = 8;
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  ArchSpec spec;
  const auto arch = detail::take<std::uint32_t>(bytes, pos);
  if (arch > 1) throw DataError("checkpoint: unknown architecture tag");
  spec.arch = static_cast<Arch>(arch);
  spec.input_width = detail::take<std::int32_t>(bytes, pos);
  spec.input_channels = detail::take<std::int32_t>(bytes, pos);
  spec.kernel = detail::take<std::int32_t>(bytes, pos);
  spec.leaky_slope = detail::take<double>(bytes, pos);
  const auto n_widths = detail::take<std::uint32_t>(bytes, pos);
  spec.widths.clear();
  for (std::uint32_t i = 0; i < n_widths; ++i) spec.widths.push_back(detail::take<std::int32_t>(bytes, pos));
  auto m = make_autoencoder<Scalar>(spec, 0);
  const auto n_params = detail::take<std::uint64_t>(bytes, pos);
  if (n_params != m.params.size()) throw DataError("checkpoint: parameter count does not match layer shapes");
  for (auto& p : m.params) p = static_cast<Scalar>(detail::take<float>(bytes, pos));
  const auto n_cfg = detail::take<std::uint32_t>(bytes, pos);
  if (pos + n_cfg > bytes.size()) throw DataError("checkpoint truncated");
  if (config_json) *config_json = bytes.substr(pos, n_cfg);
  return m;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const AutoencoderModel<Scalar>& m, const std::string& config_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const auto bytes = serialize_checkpoint(m, config_json);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Scalar>
AutoencoderModel<Scalar> load_checkpoint(const std::filesystem::path& path, std::string* config_json = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<Scalar>(ss.str(), config_json);
}

}  // namespace avfdae::nn
