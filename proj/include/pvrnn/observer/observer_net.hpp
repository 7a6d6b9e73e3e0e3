#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "pvrnn/core/encoding.hpp"
#include "pvrnn/core/params.hpp"
#include "pvrnn/train/adam.hpp"

namespace pvrnn {

inline constexpr int kObserverBuffer = 5;

/// Feed-forward intent classifier: tanh hidden layers, sigmoid outputs.
struct ObserverNet {
  std::vector<int> sizes;  // input, hidden..., output
  std::vector<Mat> w;
  std::vector<Vec> b;

  int inputs() const { return sizes.front(); }
  int outputs() const { return sizes.back(); }

  Vec forward(const Vec& x) const {
    if (x.size() != inputs()) throw ConfigError("observer: input size mismatch");
    Vec a = x;
    for (std::size_t l = 0; l < w.size(); ++l) {
      Vec u = w[l] * a + b[l];
      if (l + 1 < w.size())
        a = u.array().tanh();
      else
        a = (1.0 / (1.0 + (-u.array()).exp())).matrix();
    }
    return a;
  }
};

inline std::vector<int> default_observer_sizes() { return {2 * kObserverBuffer, 150, 100, 7}; }

inline ObserverNet init_observer(std::vector<int> sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw ConfigError("observer needs at least input and output sizes");
  for (int s : sizes)
    if (s < 1) throw ConfigError("observer layer sizes must be >= 1");
  ObserverNet net;
  net.sizes = std::move(sizes);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const double r = 1.0 / std::sqrt(static_cast<double>(net.sizes[l]));
    std::uniform_real_distribution<double> u(-r, r);
    Mat m(net.sizes[l + 1], net.sizes[l]);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    net.w.push_back(std::move(m));
    net.b.push_back(Vec::Zero(net.sizes[l + 1]));
  }
  return net;
}

template <class Net, class Fn>
void visit_observer(Net& net, Fn&& fn) {
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    fn("observer.w" + std::to_string(l), net.w[l]);
    fn("observer.b" + std::to_string(l), net.b[l]);
  }
}

inline std::vector<std::span<double>> tensor_spans(ObserverNet& net) {
  std::vector<std::span<double>> out;
  visit_observer(net, [&](const std::string&, auto& t) { out.emplace_back(t.data(), t.size()); });
  return out;
}

/// Input vector of the observer: positions oldest first, (x, y) interleaved.
inline Vec observer_input(std::span<const Point2> buffer) {
  Vec x(2 * static_cast<Eigen::Index>(buffer.size()));
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    x[2 * i] = buffer[i].x;
    x[2 * i + 1] = buffer[i].y;
  }
  return x;
}

struct IntentLabel {
  int index = 0;
  Vec confidence;
};

/// Classifies the last `kObserverBuffer` positions of `history`. Ties go to the
/// lowest category index; an underfull history gives no label.
inline std::optional<IntentLabel> classify(std::span<const Point2> history, const ObserverNet& net) {
  const std::size_t need = static_cast<std::size_t>(net.inputs() / 2);
  if (history.size() < need) return std::nullopt;
  IntentLabel out;
  out.confidence = net.forward(observer_input(history.last(need)));
  for (Eigen::Index i = 1; i < out.confidence.size(); ++i)
    if (out.confidence[i] > out.confidence[out.index]) out.index = static_cast<int>(i);
  return out;
}

struct ObserverSample {
  Vec input;
  int label = 0;
};

struct ObserverTrainOptions {
  int epochs = 200;
  int batch_size = 32;
  AdamSettings adam;
  std::uint64_t seed = 1;
};

/// Minibatch Adam on the mean squared error against one-hot targets. Returns
/// the per-epoch mean loss through `losses` when given.
inline ObserverNet train_observer(const std::vector<ObserverSample>& data, std::vector<int> sizes,
                                  const ObserverTrainOptions& opts, std::vector<double>* losses = nullptr) {
  if (data.empty()) throw ConfigError("observer training set is empty");
  if (opts.epochs < 1 || opts.batch_size < 1) throw ConfigError("observer epochs and batch_size must be >= 1");
  ObserverNet net = init_observer(std::move(sizes), opts.seed);
  for (const auto& s : data) {
    if (s.input.size() != net.inputs()) throw ConfigError("observer sample has wrong input size");
    if (s.label < 0 || s.label >= net.outputs()) throw ConfigError("observer sample label out of range");
  }

  const std::size_t n_layers = net.w.size();
  ObserverNet grad = net;
  AdamState adam(opts.adam);
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Vec> acts(n_layers + 1);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      for (std::size_t l = 0; l < n_layers; ++l) {
        grad.w[l].setZero();
        grad.b[l].setZero();
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = data[order[i]];
        acts[0] = s.input;
        for (std::size_t l = 0; l < n_layers; ++l) {
          Vec u = net.w[l] * acts[l] + net.b[l];
          acts[l + 1] = l + 1 < n_layers ? Vec(u.array().tanh()) : Vec((1.0 / (1.0 + (-u.array()).exp())).matrix());
        }
        Vec target = Vec::Zero(net.outputs());
        target[s.label] = 1.0;
        const Vec err = acts[n_layers] - target;
        epoch_loss += err.squaredNorm() / net.outputs();
        // d(mean sq err)/du at the sigmoid layer
        Vec delta = (2.0 / net.outputs()) * err.cwiseProduct(acts[n_layers].cwiseProduct(
                                                 (Vec::Ones(net.outputs()) - acts[n_layers])));
        for (std::size_t l = n_layers; l-- > 0;) {
          grad.w[l].noalias() += inv * delta * acts[l].transpose();
          grad.b[l] += inv * delta;
          if (l > 0) {
            Vec back = net.w[l].transpose() * delta;
            delta = back.cwiseProduct((Vec::Ones(back.size()) - acts[l].cwiseAbs2()));
          }
        }
      }
      auto ps = tensor_spans(net);
      auto gs = tensor_spans(grad);
      adam.step(ps, as_const_spans(gs));
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) throw DivergenceError("observer: non-finite loss");
    if (losses) losses->push_back(epoch_loss);
  }
  return net;
}

}  // namespace pvrnn
