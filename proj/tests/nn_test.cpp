#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <map>

#include "flare/nn/adam.hpp"
#include "flare/nn/checkpoint.hpp"
#include "flare/nn/modules.hpp"
#include "support/oracles.hpp"

using flare::Rng;
using flare::Tensor;
namespace nn = flare::nn;

namespace {

template <typename S>
void randomize(nn::NamedTensors<S>& params, Rng& rng, double scale = 0.5) {
  for (auto& [name, t] : params)
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(scale * rng.normal());
}

template <typename S>
Tensor<S> gaussian(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(scale * rng.normal());
  return t;
}

double mean_square(const Tensor<double>& t) {
  double acc = 0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += t[i] * t[i];
  return acc / static_cast<double>(t.numel());
}

/// Runs tape-backward once, snapshots gradients, then compares against
/// central differences of `fd_loss` (a gradient-free re-evaluation).
template <typename BuildLoss, typename FdLoss>
double gradcheck_max_rel_err(nn::NamedTensors<double>& params, BuildLoss build_loss,
                             FdLoss fd_loss) {
  nn::Tape<double> tape;
  auto loss = build_loss(tape);
  tape.backward(loss);
  std::map<std::string, Tensor<double>> grads;
  for (const auto& name : params.names())
    if (tape.has_param(name)) grads.emplace(name, tape.grad(name));

  static const Tensor<double> kZero;
  auto analytic = [&](const std::string& name) -> const Tensor<double>& {
    auto it = grads.find(name);
    if (it == grads.end()) {
      static Tensor<double> zeros;
      zeros = Tensor<double>(params.at(name).shape());
      return zeros;
    }
    return it->second;
  };
  auto result = oracle::check_gradients(params, fd_loss, analytic);
  INFO("worst element: " << result.worst);
  return result.max_rel_err;
}

}  // namespace

// ---------------------------------------------------------------------------
// mlp_forward
// ---------------------------------------------------------------------------

TEST_CASE("mlp: zero weights and biases give zero output") {
  nn::Mlp<double> net{"net", {3, 4, 2}};
  nn::NamedTensors<double> params;
  Rng rng(1);
  net.init(params, rng);
  for (auto& [name, t] : params)
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.0;
  Tensor<double> x({1, 3}, {0.7, -2.1, 3.3});
  Tensor<double> y = net.raw_forward(params, x);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("mlp: identity layer passes values through, rectifier clips hidden") {
  nn::NamedTensors<double> params;
  Rng rng(1);

  // Single layer = output layer: no rectification.
  nn::Mlp<double> single{"s", {2, 2}};
  single.init(params, rng);
  params.at("s.l0.w") = Tensor<double>({2, 2}, {1, 0, 0, 1});
  Tensor<double> y = single.raw_forward(params, Tensor<double>({1, 2}, {1, -2}));
  CHECK(y[0] == 1.0);
  CHECK(y[1] == -2.0);

  // Same identity as a hidden layer: ReLU clips the negative component.
  nn::Mlp<double> two{"t", {2, 2, 2}};
  two.init(params, rng);
  params.at("t.l0.w") = Tensor<double>({2, 2}, {1, 0, 0, 1});
  params.at("t.l1.w") = Tensor<double>({2, 2}, {1, 0, 0, 1});
  Tensor<double> z = two.raw_forward(params, Tensor<double>({1, 2}, {1, -2}));
  CHECK(z[0] == 1.0);
  CHECK(z[1] == 0.0);
}

TEST_CASE("mlp: random two-layer net matches hand-evaluated matrix chain") {
  Rng rng(42);
  nn::Mlp<double> net{"net", {4, 5, 3}};
  nn::NamedTensors<double> params;
  net.init(params, rng);
  randomize(params, rng);
  Tensor<double> x = gaussian<double>({2, 4}, rng);
  Tensor<double> y = net.raw_forward(params, x);

  // Oracle: explicit loops, no shared code with the library kernels.
  const auto& w0 = params.at("net.l0.w");
  const auto& b0 = params.at("net.l0.b");
  const auto& w1 = params.at("net.l1.w");
  const auto& b1 = params.at("net.l1.b");
  for (int r = 0; r < 2; ++r) {
    double hidden[5];
    for (int j = 0; j < 5; ++j) {
      double acc = b0[j];
      for (int i = 0; i < 4; ++i) acc += w0.at(j, i) * x.at(r, i);
      hidden[j] = acc > 0 ? acc : 0;
    }
    for (int k = 0; k < 3; ++k) {
      double acc = b1[k];
      for (int j = 0; j < 5; ++j) acc += w1.at(k, j) * hidden[j];
      CHECK(y.at(r, k) == Catch::Approx(acc).margin(1e-12));
    }
  }
}

TEST_CASE("mlp: tape forward equals gradient-free forward") {
  Rng rng(7);
  nn::Mlp<double> net{"net", {4, 6, 2}};
  nn::NamedTensors<double> params;
  net.init(params, rng);
  randomize(params, rng);
  Tensor<double> x = gaussian<double>({3, 4}, rng);
  nn::Tape<double> tape;
  auto y = net.forward(tape, params, tape.constant(x));
  CHECK(oracle::max_abs_diff(tape.value(y), net.raw_forward(params, x)) < 1e-14);
}

TEST_CASE("mlp: dimension mismatch names the layer") {
  nn::Mlp<double> net{"net", {3, 2}};
  nn::NamedTensors<double> params;
  Rng rng(1);
  net.init(params, rng);
  CHECK_THROWS_WITH(net.raw_forward(params, Tensor<double>({1, 5})),
                    Catch::Matchers::ContainsSubstring("net"));
}

// ---------------------------------------------------------------------------
// conv_encoder_forward
// ---------------------------------------------------------------------------

TEST_CASE("conv encoder: zero frame and zero biases give zero latent") {
  nn::ConvEncoder<double> enc{"enc", 1, 8, 8, {{2, 3, 2}}, 4};
  nn::NamedTensors<double> params;
  Rng rng(3);
  enc.init(params, rng);  // orthogonal weights, zero biases
  Tensor<double> frame({1, 1, 8, 8});
  Tensor<double> z = enc.raw_forward(params, frame);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("conv encoder: same frame encoded twice gives identical latents") {
  nn::ConvEncoder<double> enc{"enc", 1, 8, 8, {{2, 3, 2}}, 4};
  nn::NamedTensors<double> params;
  Rng rng(5);
  enc.init(params, rng);
  randomize(params, rng);
  Rng frng(11);
  Tensor<double> frame = gaussian<double>({1, 1, 8, 8}, frng);
  CHECK(oracle::max_abs_diff(enc.raw_forward(params, frame),
                             enc.raw_forward(params, frame)) == 0.0);
}

TEST_CASE("conv encoder: 1x1 kernels with known weights match direct evaluation") {
  // One 1x1 conv (w=2, b=0.5) on a 3x3 single-channel frame, then a linear
  // map whose rows sum selected pixels: latent computable entirely by hand.
  nn::ConvEncoder<double> enc{"enc", 1, 3, 3, {{1, 1, 1}}, 2};
  nn::NamedTensors<double> params;
  Rng rng(1);
  enc.init(params, rng);
  params.at("enc.conv0.w") = Tensor<double>({1, 1}, {2.0});
  params.at("enc.conv0.b") = Tensor<double>({1}, {0.5});
  Tensor<double> fcw({2, 9});
  for (int i = 0; i < 9; ++i) {
    fcw.at(0, i) = 1.0;              // latent 0 = sum of all mapped pixels
    fcw.at(1, i) = (i == 4) ? 3.0 : 0.0;  // latent 1 = 3 * center pixel
  }
  params.at("enc.fc.w") = fcw;
  params.at("enc.fc.b") = Tensor<double>({2}, {0.0, -1.0});

  Tensor<double> frame({1, 1, 3, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
  Tensor<double> z = enc.raw_forward(params, frame);

  double mapped_sum = 0.0;
  for (int i = 0; i < 9; ++i) mapped_sum += 2.0 * frame[i] + 0.5;  // all positive: ReLU no-op
  CHECK(z[0] == Catch::Approx(mapped_sum).margin(1e-12));
  CHECK(z[1] == Catch::Approx(3.0 * (2.0 * 0.5 + 0.5) - 1.0).margin(1e-12));
}

TEST_CASE("conv encoder: tape forward equals gradient-free forward") {
  nn::ConvEncoder<double> enc{"enc", 2, 10, 10, {{3, 3, 2}, {3, 3, 1}}, 6};
  nn::NamedTensors<double> params;
  Rng rng(9);
  enc.init(params, rng);
  randomize(params, rng, 0.3);
  Tensor<double> x = gaussian<double>({2, 2, 10, 10}, rng);
  nn::Tape<double> tape;
  auto z = enc.forward(tape, params, tape.constant(x));
  CHECK(oracle::max_abs_diff(tape.value(z), enc.raw_forward(params, x)) < 1e-12);
}

TEST_CASE("conv encoder: wrong spatial size is a configuration error") {
  nn::ConvEncoder<double> enc{"enc", 1, 8, 8, {{2, 3, 2}}, 4};
  nn::NamedTensors<double> params;
  Rng rng(1);
  enc.init(params, rng);
  CHECK_THROWS(enc.raw_forward(params, Tensor<double>({1, 1, 9, 9})));
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

namespace {
Tensor<double> layer_norm_eval(const Tensor<double>& v, const Tensor<double>& gain,
                               const Tensor<double>& bias, double eps) {
  nn::Tape<double> tape;
  auto out = tape.layer_norm(tape.constant(v), tape.constant(gain), tape.constant(bias), eps);
  return tape.value(out);
}
}  // namespace

TEST_CASE("layer norm: constant vector maps to zero") {
  Tensor<double> v({1, 5}, {3.3, 3.3, 3.3, 3.3, 3.3});
  Tensor<double> gain({5}, {1, 1, 1, 1, 1});
  Tensor<double> bias({5});
  Tensor<double> out = layer_norm_eval(v, gain, bias, 1e-6);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("layer norm: [1,2,3] normalizes to zero mean, unit variance") {
  Tensor<double> v({1, 3}, {1, 2, 3});
  Tensor<double> gain({3}, {1, 1, 1});
  Tensor<double> bias({3});
  Tensor<double> out = layer_norm_eval(v, gain, bias, 1e-12);
  double mean = (out[0] + out[1] + out[2]) / 3.0;
  double var = 0;
  for (int i = 0; i < 3; ++i) var += (out[i] - mean) * (out[i] - mean);
  var /= 3.0;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(var == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer norm: random input matches brute-force formula") {
  Rng rng(17);
  const int d = 7;
  Tensor<double> v = gaussian<double>({2, d}, rng);
  Tensor<double> gain = gaussian<double>({d}, rng);
  Tensor<double> bias = gaussian<double>({d}, rng);
  const double eps = 1e-5;
  Tensor<double> out = layer_norm_eval(v, gain, bias, eps);
  for (int r = 0; r < 2; ++r) {
    double mean = 0;
    for (int i = 0; i < d; ++i) mean += v.at(r, i);
    mean /= d;
    double var = 0;
    for (int i = 0; i < d; ++i) var += (v.at(r, i) - mean) * (v.at(r, i) - mean);
    var /= d;
    for (int i = 0; i < d; ++i) {
      const double want = gain[i] * (v.at(r, i) - mean) / std::sqrt(var + eps) + bias[i];
      CHECK(out.at(r, i) == Catch::Approx(want).margin(1e-12));
    }
  }
}

TEST_CASE("layer norm: output statistics with unit gain, zero bias") {
  Rng rng(23);
  const int d = 64;
  Tensor<double> v = gaussian<double>({4, d}, rng);
  Tensor<double> gain({d}, std::vector<double>(d, 1.0));
  Tensor<double> bias({d});
  Tensor<double> out = layer_norm_eval(v, gain, bias, 1e-6);
  for (int r = 0; r < 4; ++r) {
    double mean = 0;
    for (int i = 0; i < d; ++i) mean += out.at(r, i);
    mean /= d;
    double var = 0;
    for (int i = 0; i < d; ++i) var += (out.at(r, i) - mean) * (out.at(r, i) - mean);
    var /= d;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

// ---------------------------------------------------------------------------
// recurrent_step
// ---------------------------------------------------------------------------

TEST_CASE("recurrent cell: zero weights hold the zero state fixed") {
  nn::LstmCell<double> cell{"rnn", 3, 4};
  nn::NamedTensors<double> params;
  Rng rng(1);
  cell.init(params, rng);
  for (auto& [name, t] : params)
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.0;
  auto state = cell.zero_state(1);
  Rng xrng(2);
  for (int step = 0; step < 3; ++step) {
    state = cell.raw_step(params, gaussian<double>({1, 3}, xrng), state);
    // gates = 0 -> i = f = o = 1/2, candidate = tanh(0) = 0 -> c = 0, h = 0
    for (int i = 0; i < 4; ++i) {
      CHECK(state.c.at(0, i) == 0.0);
      CHECK(state.h.at(0, i) == 0.0);
    }
  }
}

TEST_CASE("recurrent cell: same input and state give the same next state") {
  nn::LstmCell<double> cell{"rnn", 3, 4};
  nn::NamedTensors<double> params;
  Rng rng(6);
  cell.init(params, rng);
  randomize(params, rng);
  Rng xrng(8);
  Tensor<double> x = gaussian<double>({2, 3}, xrng);
  auto s0 = cell.zero_state(2);
  s0.h = gaussian<double>({2, 4}, xrng);
  s0.c = gaussian<double>({2, 4}, xrng);
  auto a = cell.raw_step(params, x, s0);
  auto b = cell.raw_step(params, x, s0);
  CHECK(oracle::max_abs_diff(a.h, b.h) == 0.0);
  CHECK(oracle::max_abs_diff(a.c, b.c) == 0.0);
}

TEST_CASE("recurrent cell: 3-step rollout matches gate-by-gate oracle") {
  const int in = 2, hid = 3;
  nn::LstmCell<double> cell{"rnn", in, hid};
  nn::NamedTensors<double> params;
  Rng rng(31);
  cell.init(params, rng);
  randomize(params, rng);
  Rng xrng(32);
  std::vector<Tensor<double>> xs;
  for (int step = 0; step < 3; ++step) xs.push_back(gaussian<double>({1, in}, xrng));

  auto state = cell.zero_state(1);
  for (const auto& x : xs) state = cell.raw_step(params, x, state);

  // Oracle: independent gate arithmetic, scalar by scalar.
  const auto& w = params.at("rnn.w");
  const auto& b = params.at("rnn.b");
  std::vector<double> h(hid, 0.0), c(hid, 0.0);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (const auto& x : xs) {
    std::vector<double> gates(4 * hid);
    for (int g = 0; g < 4 * hid; ++g) {
      double acc = b[g];
      for (int i = 0; i < in; ++i) acc += w.at(g, i) * x[i];
      for (int i = 0; i < hid; ++i) acc += w.at(g, in + i) * h[i];
      gates[g] = acc;
    }
    for (int i = 0; i < hid; ++i) {
      const double ig = sigmoid(gates[i]);
      const double fg = sigmoid(gates[hid + i]);
      const double gg = std::tanh(gates[2 * hid + i]);
      const double og = sigmoid(gates[3 * hid + i]);
      c[i] = fg * c[i] + ig * gg;
      h[i] = og * std::tanh(c[i]);
    }
  }
  for (int i = 0; i < hid; ++i) {
    CHECK(state.h.at(0, i) == Catch::Approx(h[i]).margin(1e-12));
    CHECK(state.c.at(0, i) == Catch::Approx(c[i]).margin(1e-12));
  }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

TEST_CASE("backward: constant loss yields an all-zero gradient set") {
  nn::NamedTensors<double> params;
  params.insert("p", Tensor<double>({3}, {1, 2, 3}));
  nn::Tape<double> tape;
  tape.param("p", params.at("p"));  // on tape but unused by the loss
  auto loss = tape.mean_all(tape.constant(Tensor<double>({2}, {5, 7})));
  tape.backward(loss);
  const auto& g = tape.grad("p");
  for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("backward: gradient of half squared norm is the parameter itself") {
  nn::NamedTensors<double> params;
  params.insert("p", Tensor<double>({4}, {1.5, -2.0, 0.25, 3.0}));
  nn::Tape<double> tape;
  auto p = tape.param("p", params.at("p"));
  auto loss = tape.scale(tape.sum_all(tape.square(p)), 0.5);
  tape.backward(loss);
  const auto& g = tape.grad("p");
  for (int64_t i = 0; i < 4; ++i)
    CHECK(g[i] == Catch::Approx(params.at("p")[i]).margin(1e-15));
}

TEST_CASE("gradient oracle: mlp passes finite differences over 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    nn::Mlp<double> net{"net", {5, 8, 3}};
    nn::NamedTensors<double> params;
    net.init(params, rng);
    randomize(params, rng);
    Tensor<double> x = gaussian<double>({4, 5}, rng);

    auto build = [&](nn::Tape<double>& t) {
      auto y = net.forward(t, params, t.constant(x));
      return t.mean_all(t.square(y));
    };
    auto fd = [&]() { return mean_square(net.raw_forward(params, x)); };
    INFO("seed " << seed);
    CHECK(gradcheck_max_rel_err(params, build, fd) < 1e-4);
  }
}

TEST_CASE("gradient oracle: conv encoder passes finite differences over 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 31 + 1);
    nn::ConvEncoder<double> enc{"enc", 1, 8, 8, {{2, 3, 2}}, 4};
    nn::NamedTensors<double> params;
    enc.init(params, rng);
    randomize(params, rng, 0.4);
    Tensor<double> x = gaussian<double>({2, 1, 8, 8}, rng);

    auto build = [&](nn::Tape<double>& t) {
      auto z = enc.forward(t, params, t.constant(x));
      return t.mean_all(t.square(z));
    };
    auto fd = [&]() { return mean_square(enc.raw_forward(params, x)); };
    INFO("seed " << seed);
    CHECK(gradcheck_max_rel_err(params, build, fd) < 1e-4);
  }
}

TEST_CASE("gradient oracle: recurrent cell passes finite differences over 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 97 + 5);
    nn::LstmCell<double> cell{"rnn", 3, 4};
    nn::NamedTensors<double> params;
    cell.init(params, rng);
    randomize(params, rng);
    std::vector<Tensor<double>> xs;
    for (int s = 0; s < 3; ++s) xs.push_back(gaussian<double>({2, 3}, rng));

    auto build = [&](nn::Tape<double>& t) {
      typename nn::LstmCell<double>::TapeState st{
          t.constant(Tensor<double>({2, 4})), t.constant(Tensor<double>({2, 4}))};
      for (const auto& x : xs) st = cell.step(t, params, t.constant(x), st);
      return t.mean_all(t.square(st.h));
    };
    auto fd = [&]() {
      auto st = cell.zero_state(2);
      for (const auto& x : xs) st = cell.raw_step(params, x, st);
      return mean_square(st.h);
    };
    INFO("seed " << seed);
    CHECK(gradcheck_max_rel_err(params, build, fd) < 1e-4);
  }
}

TEST_CASE("gradient oracle: layer norm head passes finite differences over 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 13 + 3);
    nn::NamedTensors<double> params;
    const int d = 6;
    params.insert("w", gaussian<double>({d, 4}, rng, 0.5));
    params.insert("b", gaussian<double>({d}, rng, 0.5));
    params.insert("gain", gaussian<double>({d}, rng, 0.5));
    params.insert("bias", gaussian<double>({d}, rng, 0.5));
    Tensor<double> x = gaussian<double>({3, 4}, rng);

    auto forward_raw = [&]() {
      Tensor<double> y = nn::raw_linear(x, params.at("w"), params.at("b"));
      // brute-force layer norm for the finite-difference side
      const double eps = 1e-5;
      for (int r = 0; r < y.dim(0); ++r) {
        double mean = 0;
        for (int c = 0; c < d; ++c) mean += y.at(r, c);
        mean /= d;
        double var = 0;
        for (int c = 0; c < d; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        var /= d;
        for (int c = 0; c < d; ++c)
          y.at(r, c) = params.at("gain")[c] * (y.at(r, c) - mean) / std::sqrt(var + eps) +
                       params.at("bias")[c];
      }
      return mean_square(y);
    };
    auto build = [&](nn::Tape<double>& t) {
      auto y = t.linear(t.constant(x), t.param("w", params.at("w")),
                        t.param("b", params.at("b")));
      auto out = t.layer_norm(y, t.param("gain", params.at("gain")),
                              t.param("bias", params.at("bias")), 1e-5);
      return t.mean_all(t.square(out));
    };
    INFO("seed " << seed);
    CHECK(gradcheck_max_rel_err(params, build, forward_raw) < 1e-4);
  }
}

TEST_CASE("stop gradient: forward identical, upstream contribution removed") {
  nn::NamedTensors<double> params;
  params.insert("x", Tensor<double>({3}, {1.0, -2.0, 3.0}));

  // y = x * stop(x): dy/dx = stop(x) = x values (product rule's second term dies)
  nn::Tape<double> tape;
  auto x = tape.param("x", params.at("x"));
  auto y = tape.mul(x, tape.stop_grad(x));
  auto loss = tape.sum_all(y);
  tape.backward(loss);
  for (int i = 0; i < 3; ++i)
    CHECK(tape.grad("x")[i] == Catch::Approx(params.at("x")[i]).margin(1e-15));

  // Forward value identical to the no-detach computation.
  nn::Tape<double> tape2;
  auto x2 = tape2.param("x", params.at("x"));
  auto y2 = tape2.mul(x2, x2);
  CHECK(oracle::max_abs_diff(tape.value(y), tape2.value(y2)) == 0.0);

  // And the no-detach gradient differs: d(x*x)/dx = 2x.
  auto loss2 = tape2.sum_all(y2);
  tape2.backward(loss2);
  for (int i = 0; i < 3; ++i)
    CHECK(tape2.grad("x")[i] == Catch::Approx(2.0 * params.at("x")[i]).margin(1e-15));
}

// ---------------------------------------------------------------------------
// adam_step
// ---------------------------------------------------------------------------

TEST_CASE("adam: zero gradient leaves parameters unchanged, advances the counter") {
  nn::NamedTensors<float> params;
  params.insert("p", Tensor<float>({3}, {1.f, 2.f, 3.f}));
  nn::Adam<float> opt({"p"}, 0.1f);
  nn::Tape<float> tape;  // empty tape: no gradient for "p"
  auto loss = tape.mean_all(tape.constant(Tensor<float>::scalar(1.f)));
  tape.backward(loss);
  opt.step(params, tape);
  CHECK(params.at("p")[0] == 1.f);
  CHECK(params.at("p")[1] == 2.f);
  CHECK(params.at("p")[2] == 3.f);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: first step with unit gradient moves by about the learning rate") {
  nn::NamedTensors<double> params;
  params.insert("p", Tensor<double>({1}, {5.0}));
  nn::Adam<double> opt({"p"}, 0.1);
  nn::Tape<double> tape;
  auto loss = tape.sum_all(tape.param("p", params.at("p")));  // d loss / d p = 1
  tape.backward(loss);
  opt.step(params, tape);
  // bias correction makes m̂/√v̂ = 1/(1+eps) on step one
  CHECK(params.at("p")[0] == Catch::Approx(4.9).margin(1e-6));
}

TEST_CASE("adam: descends a quadratic bowl monotonically after burn-in") {
  Rng rng(77);
  nn::NamedTensors<double> params;
  params.insert("p", gaussian<double>({4}, rng, 2.0));
  nn::Adam<double> opt({"p"}, 0.05);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    nn::Tape<double> tape;
    auto p = tape.param("p", params.at("p"));
    auto loss = tape.scale(tape.sum_all(tape.square(p)), 0.5);
    losses.push_back(tape.value(loss)[0]);
    tape.backward(loss);
    opt.step(params, tape);
  }
  for (size_t i = 51; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
  CHECK(losses.back() < 0.1 * losses.front());
}

TEST_CASE("adam: identical seeds give bitwise-identical parameters") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    nn::Mlp<float> net{"net", {3, 8, 2}};
    nn::NamedTensors<float> params;
    net.init(params, rng);
    nn::Adam<float> opt(params.names(), 1e-3f);
    for (int step = 0; step < 25; ++step) {
      Tensor<float> x = gaussian<float>({4, 3}, rng);
      nn::Tape<float> tape;
      auto y = net.forward(tape, params, tape.constant(x));
      auto loss = tape.mean_all(tape.square(y));
      tape.backward(loss);
      opt.step(params, tape);
    }
    return params;
  };
  auto a = run(123), b = run(123);
  for (const auto& name : a.names())
    CHECK(flare::bitwise_equal(a.at(name), b.at(name)));
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint: save and load round-trips tensors, optimizer state, text") {
  Rng rng(55);
  nn::Mlp<float> net{"net", {3, 4, 2}};
  nn::NamedTensors<float> params;
  net.init(params, rng);
  nn::Adam<float> opt(params.names(), 1e-3f);
  {
    nn::Tape<float> tape;
    auto y = net.forward(tape, params, tape.constant(gaussian<float>({2, 3}, rng)));
    auto loss = tape.mean_all(tape.square(y));
    tape.backward(loss);
    opt.step(params, tape);
  }

  nn::Checkpoint<float> ck;
  ck.sections["params"] = params;
  nn::NamedTensors<float> optim;
  opt.export_state("adam", optim);
  ck.sections["optim"] = optim;
  ck.text["env"] = "pendulum";
  ck.text["mode"] = "state_flare";

  const std::string path = "ckpt_roundtrip.bin";
  ck.save(path);
  auto loaded = nn::Checkpoint<float>::load(path);
  std::remove(path.c_str());

  REQUIRE(loaded.sections.count("params") == 1);
  REQUIRE(loaded.sections.count("optim") == 1);
  CHECK(loaded.text.at("env") == "pendulum");
  CHECK(loaded.text.at("mode") == "state_flare");
  for (const auto& name : params.names())
    CHECK(flare::bitwise_equal(loaded.sections["params"].at(name), params.at(name)));
  for (const auto& name : optim.names())
    CHECK(flare::bitwise_equal(loaded.sections["optim"].at(name), optim.at(name)));
}

TEST_CASE("checkpoint: rejects files with a foreign header") {
  const std::string path = "ckpt_bogus.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "definitely not a checkpoint";
  }
  CHECK_THROWS(nn::Checkpoint<float>::load(path));
  std::remove(path.c_str());
}

// ---------------------------------------------------------------------------
// orthogonal initialization
// ---------------------------------------------------------------------------

TEST_CASE("orthogonal init: rows are orthonormal when rows <= cols") {
  Rng rng(101);
  Tensor<double> w = nn::orthogonal<double>(4, 7, rng);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double dot = 0;
      for (int c = 0; c < 7; ++c) dot += w.at(i, c) * w.at(j, c);
      CHECK(dot == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));
    }
}

TEST_CASE("orthogonal init: columns are orthonormal when rows > cols") {
  Rng rng(102);
  Tensor<double> w = nn::orthogonal<double>(7, 3, rng);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int r = 0; r < 7; ++r) dot += w.at(r, i) * w.at(r, j);
      CHECK(dot == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));
    }
}
