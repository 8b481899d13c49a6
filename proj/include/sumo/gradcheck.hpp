#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sumo/model.hpp"
#include "sumo/nn.hpp"
#include "sumo/tensor.hpp"
#include "sumo/train.hpp"

namespace sumo::gradcheck {

struct Entry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct Report {
  std::vector<Entry> entries;
  bool pass = true;

  void add(const std::string& name, double err, double tol) {
    entries.push_back({name, err, err < tol});
    if (err >= tol) pass = false;
  }
};

inline double rel_err(double analytic, double numeric) {
  double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

// Central finite differences of `loss()` with respect to every element of
// `param`, compared against the precomputed analytic gradient. f64 only.
inline double check_tensor(Tensor<double>& param, const Tensor<double>& analytic,
                           const std::function<double()>& loss, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double up = loss();
    param[i] = saved - step;
    const double down = loss();
    param[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, rel_err(analytic[i], numeric));
  }
  return worst;
}

namespace detail {

inline Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double weighted_sum(const Tensor<double>& out, const Tensor<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * weights[i];
  return s;
}

}  // namespace detail

// Canonical verification battery: every layer plus a tiny end-to-end model.
// Scalar probes are random linear functionals of the layer output.
inline Report run_suite(std::uint64_t seed = 20220913) {
  Rng rng(seed);
  Report report;

  {  // conv1d, plain and dilated
    for (std::size_t dilation : {std::size_t{1}, std::size_t{2}}) {
      auto layer = nn::Conv1d<double>::make_same(3, 4, 3, dilation);
      layer.kernel = detail::random_tensor(layer.kernel.shape(), rng);
      layer.bias = detail::random_tensor(layer.bias.shape(), rng);
      Tensor<double> x = detail::random_tensor({2, 3, 16}, rng);
      Tensor<double> probe = detail::random_tensor({2, 4, 16}, rng);
      auto loss = [&] { return detail::weighted_sum(nn::conv1d(x, layer), probe); };
      auto grads = nn::conv1d_backward(x, layer, probe);
      std::string tag = "conv1d(d=" + std::to_string(dilation) + ")";
      report.add(tag + ".x", check_tensor(x, grads.x, loss), 1e-6);
      report.add(tag + ".kernel", check_tensor(layer.kernel, grads.kernel, loss), 1e-6);
      report.add(tag + ".bias", check_tensor(layer.bias, grads.bias, loss), 1e-6);
    }
  }

  {  // relu; keep inputs away from the kink
    Tensor<double> x = detail::random_tensor({2, 2, 12}, rng);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (std::abs(x[i]) < 1e-3) x[i] += 0.1;
    Tensor<double> probe = detail::random_tensor({2, 2, 12}, rng);
    auto loss = [&] { return detail::weighted_sum(nn::relu(x), probe); };
    Tensor<double> analytic = nn::relu_backward(x, probe);
    report.add("relu.x", check_tensor(x, analytic, loss), 1e-6);
  }

  {  // batch norm, train mode
    auto layer = nn::BatchNorm1d<double>::make(3);
    layer.gamma = detail::random_tensor({3}, rng, 0.5, 1.5);
    layer.beta = detail::random_tensor({3}, rng);
    Tensor<double> x = detail::random_tensor({2, 3, 8}, rng);
    Tensor<double> probe = detail::random_tensor({2, 3, 8}, rng);
    auto loss = [&] {
      auto copy = layer;  // keep running stats untouched between probes
      return detail::weighted_sum(nn::batchnorm1d(x, copy, nn::Mode::train), probe);
    };
    auto work = layer;
    nn::BatchNormCache<double> cache;
    nn::batchnorm1d(x, work, nn::Mode::train, &cache);
    auto grads = nn::batchnorm1d_backward(layer, cache, probe);
    report.add("batchnorm.x", check_tensor(x, grads.x, loss), 1e-5);
    report.add("batchnorm.gamma", check_tensor(layer.gamma, grads.gamma, loss), 1e-5);
    report.add("batchnorm.beta", check_tensor(layer.beta, grads.beta, loss), 1e-5);
  }

  {  // max pooling (ceil mode) routes gradients to the argmax
    Tensor<double> x = detail::random_tensor({2, 2, 17}, rng);
    Tensor<double> probe = detail::random_tensor({2, 2, 5}, rng);
    auto loss = [&] { return detail::weighted_sum(nn::maxpool1d(x, 4).out, probe); };
    auto pooled = nn::maxpool1d(x, 4);
    Tensor<double> analytic = nn::maxpool1d_backward(pooled, 17, probe);
    report.add("maxpool.x", check_tensor(x, analytic, loss), 1e-6);
  }

  {  // nearest-neighbor upsampling with right trim
    Tensor<double> x = detail::random_tensor({1, 2, 5}, rng);
    Tensor<double> probe = detail::random_tensor({1, 2, 18}, rng);
    auto loss = [&] { return detail::weighted_sum(nn::upsample_nn(x, 4, 18), probe); };
    Tensor<double> analytic = nn::upsample_nn_backward(4, 5, probe);
    report.add("upsample.x", check_tensor(x, analytic, loss), 1e-6);
  }

  {  // channel concatenation splits its gradient
    Tensor<double> a = detail::random_tensor({1, 2, 6}, rng);
    Tensor<double> b = detail::random_tensor({1, 3, 6}, rng);
    Tensor<double> probe = detail::random_tensor({1, 5, 6}, rng);
    auto loss = [&] { return detail::weighted_sum(nn::concat_channels(a, b), probe); };
    auto [ga, gb] = nn::split_channels(probe, 2);
    report.add("concat.a", check_tensor(a, ga, loss), 1e-6);
    report.add("concat.b", check_tensor(b, gb, loss), 1e-6);
  }

  {  // two-channel softmax
    Tensor<double> x = detail::random_tensor({2, 2, 9}, rng);
    Tensor<double> probe = detail::random_tensor({2, 2, 9}, rng);
    auto loss = [&] { return detail::weighted_sum(nn::softmax_channels(x), probe); };
    Tensor<double> analytic = nn::softmax_channels_backward(nn::softmax_channels(x), probe);
    report.add("softmax.x", check_tensor(x, analytic, loss), 1e-6);
  }

  {  // generalized dice loss with respect to the probabilities
    Tensor<double> logits = detail::random_tensor({1, 2, 32}, rng);
    Tensor<double> p = nn::softmax_channels(logits);
    Tensor<double> labels({1, 2, 32});
    for (std::size_t t = 0; t < 32; ++t) {
      const bool spindle = rng.uniform() < 0.3;
      labels(0, 1, t) = spindle ? 1.0 : 0.0;
      labels(0, 0, t) = spindle ? 0.0 : 1.0;
    }
    auto loss = [&] { return sumo::train::generalized_dice_loss(p, labels).loss; };
    Tensor<double> analytic = sumo::train::generalized_dice_loss(p, labels).grad;
    report.add("dice.p", check_tensor(p, analytic, loss), 1e-5);
  }

  {  // tiny full model end to end: dice(softmax(unet(x)))
    ArchConfig arch;
    arch.levels = 2;
    arch.pool_widths = {4};
    arch.channels = {2, 4};
    arch.kernel_size = 7;
    arch.dilations = {1, 1};
    Model<double> model = build_model<double>(arch, seed ^ 0xabcdef);
    const std::size_t T = 64;
    Tensor<double> x = detail::random_tensor({2, 1, T}, rng);
    Tensor<double> labels({2, 2, T});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        const bool spindle = rng.uniform() < 0.25;
        labels(b, 1, t) = spindle ? 1.0 : 0.0;
        labels(b, 0, t) = spindle ? 0.0 : 1.0;
      }
    auto loss = [&] {
      Tensor<double> probs = forward(model, x, nn::Mode::train);
      return sumo::train::generalized_dice_loss(probs, labels).loss;
    };
    ModelCache<double> cache;
    Tensor<double> probs = forward(model, x, nn::Mode::train, &cache);
    auto dice = sumo::train::generalized_dice_loss(probs, labels);
    auto grads = backward(model, cache, dice.grad);
    double worst_param = 0.0;
    model.visit_params([&](const std::string& name, Tensor<double>& t, ParamKind kind) {
      if (kind != ParamKind::learnable) return;
      worst_param = std::max(worst_param, check_tensor(t, grads.grads.at(name), loss));
    });
    report.add("model.params", worst_param, 1e-4);
    report.add("model.input", check_tensor(x, grads.input, loss), 1e-4);
  }

  return report;
}

}  // namespace sumo::gradcheck
