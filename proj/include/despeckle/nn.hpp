#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"
#include "despeckle/rng.hpp"

namespace despeckle {

/// Dense n-dimensional real array, row-major.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    std::size_t n = 1;
    for (int d : t.shape) n *= static_cast<std::size_t>(d);
    t.data.assign(n, 0.0);
    return t;
  }

  std::size_t numel() const { return data.size(); }
};

struct SgdConfig {
  double initial_lr = 0.05;
  double decay_factor = 10.0;  // divide lr by this...
  int decay_every = 20;        // ...after every this many epochs
};

/// Stepwise-decayed learning rate: initial / factor^floor(epoch / every).
inline double lr_at(const SgdConfig& cfg, int epoch) {
  assert(cfg.initial_lr > 0.0 && cfg.decay_factor > 1.0 && cfg.decay_every >= 1 && epoch >= 0);
  return cfg.initial_lr / std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

// ---------------------------------------------------------------------------
// Denoising network.
//
// Fully convolutional encoder-decoder: a stem conv, two stride-2 convs down,
// two convs behind nearest-neighbor upsampling with encoder skip
// concatenations, and a zero-initialized output conv feeding a global
// input->output residual skip, so the untrained net is exactly the identity.
// The skips matter: without full-resolution features the decoder would be a
// function of the downsampled image alone and could never cancel per-pixel
// noise. The noise-schedule vector tau (all T alpha values) passes through
// one fully connected layer whose output is added as a per-channel bias
// after the stem conv; the net sees which noise levels exist but is never
// told which one corrupted a given input. A `shallow` variant keeps only
// stem + output conv, for gradient checks and quick tests.
// ---------------------------------------------------------------------------

struct DenoiserConfig {
  int base_channels = 16;  // stem / decoder-end width, also the tau embedding width
  int mid_channels = 32;   // encoder/decoder interior width
  double leaky_slope = 0.1;
  bool shallow = false;
};

struct DenoiserNet {
  DenoiserConfig cfg;
  int timesteps = 0;            // tau length the embedding was built for
  std::vector<Tensor> params;   // fixed registry order, output conv last

  // Registry layout:
  //   full:    conv1.w conv1.b embed.w embed.b conv2.w conv2.b conv3.w conv3.b
  //            conv4.w conv4.b conv5.w conv5.b out.w out.b
  //   shallow: conv1.w conv1.b embed.w embed.b out.w out.b
  int idx_conv1_w() const { return 0; }
  int idx_conv1_b() const { return 1; }
  int idx_embed_w() const { return 2; }
  int idx_embed_b() const { return 3; }
  int idx_conv2_w() const { return 4; }
  int idx_conv3_w() const { return 6; }
  int idx_conv4_w() const { return 8; }
  int idx_conv5_w() const { return 10; }
  int idx_out_w() const { return cfg.shallow ? 4 : 12; }
  int idx_out_b() const { return cfg.shallow ? 5 : 13; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor& t : params) n += t.numel();
    return n;
  }

  /// Smallest input side the architecture accepts.
  int min_input_dim() const { return cfg.shallow ? 3 : 8; }

  static std::size_t expected_param_count(const DenoiserConfig& cfg, int timesteps) {
    const std::size_t c1 = static_cast<std::size_t>(cfg.base_channels);
    const std::size_t c2 = static_cast<std::size_t>(cfg.mid_channels);
    const std::size_t t = static_cast<std::size_t>(timesteps);
    std::size_t n = c1 * 9 + c1;        // conv1
    n += c1 * t + c1;                   // tau embedding
    if (!cfg.shallow) {
      n += c2 * c1 * 9 + c2;            // conv2
      n += c2 * c2 * 9 + c2;            // conv3
      n += c2 * (2 * c2) * 9 + c2;      // conv4 over [up1 | act2]
      n += c1 * (c2 + c1) * 9 + c1;     // conv5 over [up2 | act1]
    }
    n += 1 * c1 * 9 + 1;                // output conv
    return n;
  }

  /// Fan-in scaled centered-uniform init; the output conv is zeroed by
  /// default so the initial prediction equals the input via the skip.
  static DenoiserNet init(const DenoiserConfig& cfg, int timesteps, std::uint64_t seed,
                          bool zero_final = true) {
    assert(timesteps >= 1);
    DenoiserNet net;
    net.cfg = cfg;
    net.timesteps = timesteps;
    const int c1 = cfg.base_channels, c2 = cfg.mid_channels;

    auto conv = [](int oc, int ic) { return Tensor::zeros({oc, ic, 3, 3}); };
    net.params.push_back(conv(c1, 1));
    net.params.push_back(Tensor::zeros({c1}));
    net.params.push_back(Tensor::zeros({c1, timesteps}));
    net.params.push_back(Tensor::zeros({c1}));
    if (!cfg.shallow) {
      net.params.push_back(conv(c2, c1));
      net.params.push_back(Tensor::zeros({c2}));
      net.params.push_back(conv(c2, c2));
      net.params.push_back(Tensor::zeros({c2}));
      net.params.push_back(conv(c2, 2 * c2));
      net.params.push_back(Tensor::zeros({c2}));
      net.params.push_back(conv(c1, c2 + c1));
      net.params.push_back(Tensor::zeros({c1}));
    }
    net.params.push_back(conv(1, c1));
    net.params.push_back(Tensor::zeros({1}));

    rng::Stream s(rng::derive(seed, {0x1717u}));
    auto fill_uniform = [&s](Tensor& t, double bound) {
      for (double& v : t.data) v = bound * (2.0 * s.next_unit() - 1.0);
    };
    for (std::size_t k = 0; k < net.params.size(); ++k) {
      Tensor& t = net.params[k];
      if (t.shape.size() == 1) continue;  // biases start at zero
      const bool is_final = static_cast<int>(k) == net.idx_out_w();
      if (is_final && zero_final) continue;
      const double fan_in = t.shape.size() == 4
                                ? static_cast<double>(t.shape[1]) * 9.0
                                : static_cast<double>(t.shape[1]);  // embedding: {c1, T}
      fill_uniform(t, std::sqrt(3.0 / fan_in));  // weight std = fan_in^(-1/2)
    }
    assert(net.param_count() == expected_param_count(cfg, timesteps));
    return net;
  }
};

/// Per-parameter gradient storage matching a net's registry.
struct GradBuffer {
  std::vector<Tensor> g;

  static GradBuffer zeros_like(const DenoiserNet& net) {
    GradBuffer b;
    b.g.reserve(net.params.size());
    for (const Tensor& t : net.params) b.g.push_back(Tensor::zeros(t.shape));
    return b;
  }

  void zero() {
    for (Tensor& t : g)
      std::fill(t.data.begin(), t.data.end(), 0.0);
  }

  void add(const GradBuffer& other) {
    for (std::size_t k = 0; k < g.size(); ++k)
      for (std::size_t i = 0; i < g[k].data.size(); ++i) g[k].data[i] += other.g[k].data[i];
  }

  void scale(double f) {
    for (Tensor& t : g)
      for (double& v : t.data) v *= f;
  }
};

namespace detail {

inline int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }

// 3x3 convolution, zero padding 1, arbitrary stride.
inline void conv2d_forward(const double* in, int ci, int ih, int iw, const double* wgt,
                           const double* bias, int co, int stride, double* out, int oh, int ow) {
  for (int oc = 0; oc < co; ++oc) {
    double* op = out + static_cast<std::size_t>(oc) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) op[i] = bias[oc];
    for (int ic = 0; ic < ci; ++ic) {
      const double* ip = in + static_cast<std::size_t>(ic) * ih * iw;
      const double* wp = wgt + (static_cast<std::size_t>(oc) * ci + ic) * 9;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * stride - 1;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix0 = ox * stride - 1;
          double acc = 0.0;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            const double* row = ip + static_cast<std::size_t>(iy) * iw;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              acc += wp[ky * 3 + kx] * row[ix];
            }
          }
          op[static_cast<std::size_t>(oy) * ow + ox] += acc;
        }
      }
    }
  }
}

// Accumulates weight/bias gradients; writes input gradient if din != nullptr.
inline void conv2d_backward(const double* in, int ci, int ih, int iw, const double* wgt, int co,
                            int stride, const double* dout, int oh, int ow, double* gw, double* gb,
                            double* din) {
  if (din) std::fill(din, din + static_cast<std::size_t>(ci) * ih * iw, 0.0);
  for (int oc = 0; oc < co; ++oc) {
    const double* dop = dout + static_cast<std::size_t>(oc) * oh * ow;
    double acc = 0.0;
    for (int i = 0; i < oh * ow; ++i) acc += dop[i];
    gb[oc] += acc;
    for (int ic = 0; ic < ci; ++ic) {
      const double* ip = in + static_cast<std::size_t>(ic) * ih * iw;
      const double* wp = wgt + (static_cast<std::size_t>(oc) * ci + ic) * 9;
      double* gwp = gw + (static_cast<std::size_t>(oc) * ci + ic) * 9;
      double* dip = din ? din + static_cast<std::size_t>(ic) * ih * iw : nullptr;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * stride - 1;
        for (int ox = 0; ox < ow; ++ox) {
          const double g = dop[static_cast<std::size_t>(oy) * ow + ox];
          if (g == 0.0) continue;
          const int ix0 = ox * stride - 1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              gwp[ky * 3 + kx] += g * ip[static_cast<std::size_t>(iy) * iw + ix];
              if (dip) dip[static_cast<std::size_t>(iy) * iw + ix] += g * wp[ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

inline void leaky_relu_forward(const double* pre, double* act, std::size_t n, double slope) {
  for (std::size_t i = 0; i < n; ++i) act[i] = pre[i] >= 0.0 ? pre[i] : slope * pre[i];
}

inline void leaky_relu_backward(const double* pre, const double* dact, double* dpre,
                                std::size_t n, double slope) {
  for (std::size_t i = 0; i < n; ++i) dpre[i] = pre[i] >= 0.0 ? dact[i] : slope * dact[i];
}

// Nearest-neighbor x2 upsample onto an explicit target size (handles odd
// targets, whose half-size rounds up on the way down).
inline void upsample2_forward(const double* in, int c, int ih, int iw, double* out, int oh,
                              int ow) {
  for (int ch = 0; ch < c; ++ch) {
    const double* ip = in + static_cast<std::size_t>(ch) * ih * iw;
    double* op = out + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        op[static_cast<std::size_t>(y) * ow + x] = ip[static_cast<std::size_t>(y / 2) * iw + x / 2];
  }
}

inline void upsample2_backward(const double* dout, int c, int oh, int ow, double* din, int ih,
                               int iw) {
  std::fill(din, din + static_cast<std::size_t>(c) * ih * iw, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double* dop = dout + static_cast<std::size_t>(ch) * oh * ow;
    double* dip = din + static_cast<std::size_t>(ch) * ih * iw;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        dip[static_cast<std::size_t>(y / 2) * iw + x / 2] += dop[static_cast<std::size_t>(y) * ow + x];
  }
}

struct ForwardCache {
  int h1 = 0, w1 = 0, h2 = 0, w2 = 0, h3 = 0, w3 = 0;
  std::vector<double> embed_bias;
  std::vector<double> pre1, act1;
  std::vector<double> pre2, act2;
  std::vector<double> pre3, act3;
  std::vector<double> cat4, pre4, act4;  // cat4 = [upsampled act3 | act2]
  std::vector<double> cat5, pre5, act5;  // cat5 = [upsampled act4 | act1]
  std::vector<double> out6;
  std::vector<double> pred;
};

inline void forward_impl(const DenoiserNet& net, const Image& input, std::span<const double> tau,
                         ForwardCache& c) {
  if (static_cast<int>(tau.size()) != net.timesteps)
    throw TauLengthMismatch("forward: tau length " + std::to_string(tau.size()) +
                            " != embedding width " + std::to_string(net.timesteps));
  if (input.width < net.min_input_dim() || input.height < net.min_input_dim())
    throw ShapeMismatch("forward: input " + std::to_string(input.width) + "x" +
                        std::to_string(input.height) + " below minimum dimension " +
                        std::to_string(net.min_input_dim()));
  const int c1 = net.cfg.base_channels, c2 = net.cfg.mid_channels;
  const double slope = net.cfg.leaky_slope;
  c.h1 = input.height;
  c.w1 = input.width;
  const std::size_t n1 = static_cast<std::size_t>(c.h1) * c.w1;

  // tau embedding: one fully connected layer -> per-channel bias
  const Tensor& ew = net.params[static_cast<std::size_t>(net.idx_embed_w())];
  const Tensor& eb = net.params[static_cast<std::size_t>(net.idx_embed_b())];
  c.embed_bias.assign(static_cast<std::size_t>(c1), 0.0);
  for (int ch = 0; ch < c1; ++ch) {
    double acc = eb.data[static_cast<std::size_t>(ch)];
    const double* wrow = ew.data.data() + static_cast<std::size_t>(ch) * net.timesteps;
    for (int t = 0; t < net.timesteps; ++t) acc += wrow[t] * tau[static_cast<std::size_t>(t)];
    c.embed_bias[static_cast<std::size_t>(ch)] = acc;
  }

  c.pre1.resize(static_cast<std::size_t>(c1) * n1);
  conv2d_forward(input.data.data(), 1, c.h1, c.w1,
                 net.params[static_cast<std::size_t>(net.idx_conv1_w())].data.data(),
                 net.params[static_cast<std::size_t>(net.idx_conv1_b())].data.data(), c1, 1,
                 c.pre1.data(), c.h1, c.w1);
  for (int ch = 0; ch < c1; ++ch) {
    const double b = c.embed_bias[static_cast<std::size_t>(ch)];
    double* p = c.pre1.data() + static_cast<std::size_t>(ch) * n1;
    for (std::size_t i = 0; i < n1; ++i) p[i] += b;
  }
  c.act1.resize(c.pre1.size());
  leaky_relu_forward(c.pre1.data(), c.act1.data(), c.pre1.size(), slope);

  const std::vector<double>* last_act = &c.act1;
  int last_channels = c1;

  if (!net.cfg.shallow) {
    c.h2 = conv_out_dim(c.h1, 2);
    c.w2 = conv_out_dim(c.w1, 2);
    c.h3 = conv_out_dim(c.h2, 2);
    c.w3 = conv_out_dim(c.w2, 2);
    const std::size_t n2 = static_cast<std::size_t>(c.h2) * c.w2;
    const std::size_t n3 = static_cast<std::size_t>(c.h3) * c.w3;

    c.pre2.resize(static_cast<std::size_t>(c2) * n2);
    conv2d_forward(c.act1.data(), c1, c.h1, c.w1,
                   net.params[static_cast<std::size_t>(net.idx_conv2_w())].data.data(),
                   net.params[static_cast<std::size_t>(net.idx_conv2_w() + 1)].data.data(), c2, 2,
                   c.pre2.data(), c.h2, c.w2);
    c.act2.resize(c.pre2.size());
    leaky_relu_forward(c.pre2.data(), c.act2.data(), c.pre2.size(), slope);

    c.pre3.resize(static_cast<std::size_t>(c2) * n3);
    conv2d_forward(c.act2.data(), c2, c.h2, c.w2,
                   net.params[static_cast<std::size_t>(net.idx_conv3_w())].data.data(),
                   net.params[static_cast<std::size_t>(net.idx_conv3_w() + 1)].data.data(), c2, 2,
                   c.pre3.data(), c.h3, c.w3);
    c.act3.resize(c.pre3.size());
    leaky_relu_forward(c.pre3.data(), c.act3.data(), c.pre3.size(), slope);

    c.cat4.resize(static_cast<std::size_t>(2 * c2) * n2);
    upsample2_forward(c.act3.data(), c2, c.h3, c.w3, c.cat4.data(), c.h2, c.w2);
    std::copy(c.act2.begin(), c.act2.end(), c.cat4.begin() + static_cast<std::ptrdiff_t>(c2 * n2));
    c.pre4.resize(static_cast<std::size_t>(c2) * n2);
    conv2d_forward(c.cat4.data(), 2 * c2, c.h2, c.w2,
                   net.params[static_cast<std::size_t>(net.idx_conv4_w())].data.data(),
                   net.params[static_cast<std::size_t>(net.idx_conv4_w() + 1)].data.data(), c2, 1,
                   c.pre4.data(), c.h2, c.w2);
    c.act4.resize(c.pre4.size());
    leaky_relu_forward(c.pre4.data(), c.act4.data(), c.pre4.size(), slope);

    c.cat5.resize(static_cast<std::size_t>(c2 + c1) * n1);
    upsample2_forward(c.act4.data(), c2, c.h2, c.w2, c.cat5.data(), c.h1, c.w1);
    std::copy(c.act1.begin(), c.act1.end(), c.cat5.begin() + static_cast<std::ptrdiff_t>(c2 * n1));
    c.pre5.resize(static_cast<std::size_t>(c1) * n1);
    conv2d_forward(c.cat5.data(), c2 + c1, c.h1, c.w1,
                   net.params[static_cast<std::size_t>(net.idx_conv5_w())].data.data(),
                   net.params[static_cast<std::size_t>(net.idx_conv5_w() + 1)].data.data(), c1, 1,
                   c.pre5.data(), c.h1, c.w1);
    c.act5.resize(c.pre5.size());
    leaky_relu_forward(c.pre5.data(), c.act5.data(), c.pre5.size(), slope);

    last_act = &c.act5;
    last_channels = c1;
  }

  c.out6.resize(n1);
  conv2d_forward(last_act->data(), last_channels, c.h1, c.w1,
                 net.params[static_cast<std::size_t>(net.idx_out_w())].data.data(),
                 net.params[static_cast<std::size_t>(net.idx_out_b())].data.data(), 1, 1,
                 c.out6.data(), c.h1, c.w1);

  c.pred.resize(n1);
  for (std::size_t i = 0; i < n1; ++i) c.pred[i] = input.data[i] + c.out6[i];
}

inline void backward_impl(const DenoiserNet& net, const Image& input,
                          std::span<const double> tau, const ForwardCache& c,
                          const std::vector<double>& dpred, GradBuffer& grads) {
  const int c1 = net.cfg.base_channels, c2 = net.cfg.mid_channels;
  const double slope = net.cfg.leaky_slope;
  const std::size_t n1 = static_cast<std::size_t>(c.h1) * c.w1;

  auto& P = net.params;
  auto& G = grads.g;

  std::vector<double> dact1(static_cast<std::size_t>(c1) * n1);

  if (!net.cfg.shallow) {
    const std::size_t n2 = static_cast<std::size_t>(c.h2) * c.w2;
    std::vector<double> dact5(static_cast<std::size_t>(c1) * n1);
    conv2d_backward(c.act5.data(), c1, c.h1, c.w1,
                    P[static_cast<std::size_t>(net.idx_out_w())].data.data(), 1, 1, dpred.data(),
                    c.h1, c.w1, G[static_cast<std::size_t>(net.idx_out_w())].data.data(),
                    G[static_cast<std::size_t>(net.idx_out_b())].data.data(), dact5.data());

    std::vector<double> dpre5(dact5.size());
    leaky_relu_backward(c.pre5.data(), dact5.data(), dpre5.data(), dpre5.size(), slope);
    std::vector<double> dcat5(static_cast<std::size_t>(c2 + c1) * n1);
    conv2d_backward(c.cat5.data(), c2 + c1, c.h1, c.w1,
                    P[static_cast<std::size_t>(net.idx_conv5_w())].data.data(), c1, 1,
                    dpre5.data(), c.h1, c.w1,
                    G[static_cast<std::size_t>(net.idx_conv5_w())].data.data(),
                    G[static_cast<std::size_t>(net.idx_conv5_w() + 1)].data.data(), dcat5.data());

    std::vector<double> dact4(static_cast<std::size_t>(c2) * n2);
    upsample2_backward(dcat5.data(), c2, c.h1, c.w1, dact4.data(), c.h2, c.w2);
    std::vector<double> dpre4(dact4.size());
    leaky_relu_backward(c.pre4.data(), dact4.data(), dpre4.data(), dpre4.size(), slope);
    std::vector<double> dcat4(static_cast<std::size_t>(2 * c2) * n2);
    conv2d_backward(c.cat4.data(), 2 * c2, c.h2, c.w2,
                    P[static_cast<std::size_t>(net.idx_conv4_w())].data.data(), c2, 1,
                    dpre4.data(), c.h2, c.w2,
                    G[static_cast<std::size_t>(net.idx_conv4_w())].data.data(),
                    G[static_cast<std::size_t>(net.idx_conv4_w() + 1)].data.data(), dcat4.data());

    std::vector<double> dact3(static_cast<std::size_t>(c2) * static_cast<std::size_t>(c.h3) * c.w3);
    upsample2_backward(dcat4.data(), c2, c.h2, c.w2, dact3.data(), c.h3, c.w3);
    std::vector<double> dpre3(dact3.size());
    leaky_relu_backward(c.pre3.data(), dact3.data(), dpre3.data(), dpre3.size(), slope);
    std::vector<double> dact2(static_cast<std::size_t>(c2) * n2);
    conv2d_backward(c.act2.data(), c2, c.h2, c.w2,
                    P[static_cast<std::size_t>(net.idx_conv3_w())].data.data(), c2, 2,
                    dpre3.data(), c.h3, c.w3,
                    G[static_cast<std::size_t>(net.idx_conv3_w())].data.data(),
                    G[static_cast<std::size_t>(net.idx_conv3_w() + 1)].data.data(), dact2.data());
    // act2 also fed conv4 through the skip half of cat4
    for (std::size_t i = 0; i < dact2.size(); ++i) dact2[i] += dcat4[c2 * n2 + i];

    std::vector<double> dpre2(dact2.size());
    leaky_relu_backward(c.pre2.data(), dact2.data(), dpre2.data(), dpre2.size(), slope);
    conv2d_backward(c.act1.data(), c1, c.h1, c.w1,
                    P[static_cast<std::size_t>(net.idx_conv2_w())].data.data(), c2, 2,
                    dpre2.data(), c.h2, c.w2,
                    G[static_cast<std::size_t>(net.idx_conv2_w())].data.data(),
                    G[static_cast<std::size_t>(net.idx_conv2_w() + 1)].data.data(), dact1.data());
    // act1 also fed conv5 through the skip half of cat5
    for (std::size_t i = 0; i < dact1.size(); ++i) dact1[i] += dcat5[c2 * n1 + i];
  } else {
    conv2d_backward(c.act1.data(), c1, c.h1, c.w1,
                    P[static_cast<std::size_t>(net.idx_out_w())].data.data(), 1, 1, dpred.data(),
                    c.h1, c.w1, G[static_cast<std::size_t>(net.idx_out_w())].data.data(),
                    G[static_cast<std::size_t>(net.idx_out_b())].data.data(), dact1.data());
  }

  std::vector<double> dpre1(dact1.size());
  leaky_relu_backward(c.pre1.data(), dact1.data(), dpre1.data(), dpre1.size(), slope);

  // tau embedding gradients: the bias reaches every pixel of its channel.
  double* gew = G[static_cast<std::size_t>(net.idx_embed_w())].data.data();
  double* geb = G[static_cast<std::size_t>(net.idx_embed_b())].data.data();
  for (int ch = 0; ch < c1; ++ch) {
    const double* p = dpre1.data() + static_cast<std::size_t>(ch) * n1;
    double s = 0.0;
    for (std::size_t i = 0; i < n1; ++i) s += p[i];
    geb[ch] += s;
    double* wrow = gew + static_cast<std::size_t>(ch) * net.timesteps;
    for (int t = 0; t < net.timesteps; ++t) wrow[t] += s * tau[static_cast<std::size_t>(t)];
  }

  conv2d_backward(input.data.data(), 1, c.h1, c.w1,
                  P[static_cast<std::size_t>(net.idx_conv1_w())].data.data(), c1, 1, dpre1.data(),
                  c.h1, c.w1, G[static_cast<std::size_t>(net.idx_conv1_w())].data.data(),
                  G[static_cast<std::size_t>(net.idx_conv1_b())].data.data(), nullptr);
}

}  // namespace detail

/// Network prediction for a noisy input. Output has the input's dimensions;
/// values are unconstrained reals (the denoising API clamps, this does not).
inline Image forward(const DenoiserNet& net, const Image& noisy, std::span<const double> tau) {
  detail::ForwardCache c;
  detail::forward_impl(net, noisy, tau, c);
  Image out(noisy.width, noisy.height);
  out.data = std::move(c.pred);
  return out;
}

/// Mean-squared-error loss against a clean target plus reverse-mode gradients
/// for every parameter. Gradients are accumulated into `grads` (zero it first
/// unless accumulation is intended).
inline double loss_and_grad(const DenoiserNet& net, const Image& noisy, const Image& clean,
                            std::span<const double> tau, GradBuffer& grads) {
  if (!noisy.same_shape(clean))
    throw ShapeMismatch("loss_and_grad: noisy " + std::to_string(noisy.width) + "x" +
                        std::to_string(noisy.height) + " vs clean " + std::to_string(clean.width) +
                        "x" + std::to_string(clean.height));
  detail::ForwardCache c;
  detail::forward_impl(net, noisy, tau, c);
  const std::size_t n = c.pred.size();
  double loss = 0.0;
  std::vector<double> dpred(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = c.pred[i] - clean.data[i];
    loss += r * r;
    dpred[i] = 2.0 * r * inv_n;
  }
  loss *= inv_n;
  detail::backward_impl(net, noisy, tau, c, dpred, grads);
  return loss;
}

/// Plain SGD update: theta <- theta - lr * g.
inline void sgd_step(DenoiserNet& net, const GradBuffer& grads, double lr) {
  assert(lr > 0.0);
  if (grads.g.size() != net.params.size())
    throw ShapeMismatch("sgd_step: gradient registry size mismatch");
  for (std::size_t k = 0; k < net.params.size(); ++k) {
    if (grads.g[k].numel() != net.params[k].numel())
      throw ShapeMismatch("sgd_step: gradient tensor " + std::to_string(k) + " shape mismatch");
    for (std::size_t i = 0; i < net.params[k].data.size(); ++i)
      net.params[k].data[i] -= lr * grads.g[k].data[i];
  }
}

/// Loss only, for finite-difference probes.
inline double loss_only(const DenoiserNet& net, const Image& noisy, const Image& clean,
                        std::span<const double> tau) {
  detail::ForwardCache c;
  detail::forward_impl(net, noisy, tau, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < c.pred.size(); ++i) {
    const double r = c.pred[i] - clean.data[i];
    loss += r * r;
  }
  return loss / static_cast<double>(c.pred.size());
}

/// Central finite difference of the loss w.r.t. one parameter element.
inline double fd_gradient(DenoiserNet& net, const Image& noisy, const Image& clean,
                          std::span<const double> tau, double h, std::size_t tensor_idx,
                          std::size_t elem_idx) {
  double& p = net.params[tensor_idx].data[elem_idx];
  const double saved = p;
  p = saved + h;
  const double lp = loss_only(net, noisy, clean, tau);
  p = saved - h;
  const double lm = loss_only(net, noisy, clean, tau);
  p = saved;
  return (lp - lm) / (2.0 * h);
}

/// Exhaustive comparison of analytic gradients against central finite
/// differences over every parameter of a small net. Returns the max relative
/// error. Nets above 1e4 parameters are rejected.
inline double grad_check(DenoiserNet& net, const Image& noisy, const Image& clean,
                         std::span<const double> tau, double h) {
  assert(h > 0.0);
  if (net.param_count() > 10000)
    throw NetTooLarge("grad_check: exhaustive sweep capped at 1e4 parameters, net has " +
                      std::to_string(net.param_count()));
  GradBuffer grads = GradBuffer::zeros_like(net);
  loss_and_grad(net, noisy, clean, tau, grads);
  double worst = 0.0;
  for (std::size_t k = 0; k < net.params.size(); ++k) {
    for (std::size_t i = 0; i < net.params[k].data.size(); ++i) {
      const double analytic = grads.g[k].data[i];
      const double fd = fd_gradient(net, noisy, clean, tau, h, k, i);
      const double rel =
          std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-12});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Convenience overload with a fixed mid-gray target.
inline double grad_check(DenoiserNet& net, const Image& input, std::span<const double> tau,
                         double h) {
  Image target(input.width, input.height, 0.5);
  return grad_check(net, input, target, tau, h);
}

}  // namespace despeckle
