#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "onet/graph.hpp"

namespace onet {

struct AdamHyper {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::uint64_t t = 0;
  AdamHyper hyper;
  // One slot per registry entry: first/second moments for weights and bias.
  struct Moments {
    Tensor<T> m_w, v_w, m_b, v_b;
  };
  std::vector<Moments> moments;
};

template <typename T>
AdamState<T> init_adam(const LayerGraph<T>& g, AdamHyper hyper = {}) {
  AdamState<T> st;
  st.hyper = hyper;
  st.moments.reserve(g.param_nodes.size());
  for (int p : g.param_nodes) {
    const auto& spec = g.nodes[static_cast<std::size_t>(p)].spec;
    typename AdamState<T>::Moments m;
    m.m_w = Tensor<T>(spec.weights.shape());
    m.v_w = Tensor<T>(spec.weights.shape());
    m.m_b = Tensor<T>(spec.bias.shape());
    m.v_b = Tensor<T>(spec.bias.shape());
    st.moments.push_back(std::move(m));
  }
  return st;
}

namespace detail {

template <typename T>
void adam_update(Tensor<T>& theta, Tensor<T>& m, Tensor<T>& v,
                 const Tensor<T>& g, const AdamHyper& h, double bc1,
                 double bc2) {
  for (std::int64_t i = 0; i < theta.numel(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * gi;
    const double vi =
        h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    theta[i] = static_cast<T>(static_cast<double>(theta[i]) -
                              h.alpha * mhat / (std::sqrt(vhat) + h.eps));
  }
}

}  // namespace detail

// t <- t+1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
// theta <- theta - alpha * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
void adam_step(AdamState<T>& st, LayerGraph<T>& g,
               const std::vector<ParamGrad<T>>& grads) {
  if (grads.size() != g.param_nodes.size() ||
      st.moments.size() != g.param_nodes.size()) {
    fail("adam_step: gradient registry misaligned (" +
         std::to_string(grads.size()) + " grads, " +
         std::to_string(g.param_nodes.size()) + " parameters)");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& spec = g.nodes[static_cast<std::size_t>(g.param_nodes[i])].spec;
    if (grads[i].weights.shape() != spec.weights.shape() ||
        grads[i].bias.shape() != spec.bias.shape()) {
      fail("adam_step: gradient shape mismatch at registry entry " +
           std::to_string(i));
    }
  }

  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.hyper.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.hyper.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& spec = g.nodes[static_cast<std::size_t>(g.param_nodes[i])].spec;
    detail::adam_update(spec.weights, st.moments[i].m_w, st.moments[i].v_w,
                        grads[i].weights, st.hyper, bc1, bc2);
    detail::adam_update(spec.bias, st.moments[i].m_b, st.moments[i].v_b,
                        grads[i].bias, st.hyper, bc1, bc2);
  }
}

struct TrainConfig {
  int max_epochs = 50;
  std::int64_t max_steps = 0;  // 0 = no step cap
  int batch_size = 4;
  double stop_delta = 1e-3;
  std::uint64_t seed = 1;
  bool augment = false;  // pseudo-samples are produced offline, see datapipe
  int threads = 1;
  AdamHyper adam;
};

struct TrainLogEntry {
  int epoch;  // 1-based
  double loss;
  double seconds;
  bool stopped_early;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
};

template <typename T>
struct TrainSample {
  std::string id;
  std::string abn_type;
  Tensor<T> input;
  Tensor<T> target;
};

namespace detail {

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  return std::mt19937_64(seed ^
                         (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(
                                                      epoch + 1)));
}

}  // namespace detail

// One epoch = one shuffled full pass; batches of cfg.batch_size with the
// final short batch trained on. Batch gradients are averaged in sample-index
// order, so single-threaded runs are bit-reproducible per seed.
template <typename T>
TrainLog train(LayerGraph<T>& g, AdamState<T>& st,
               const std::vector<TrainSample<T>>& ds, const TrainConfig& cfg) {
  if (ds.empty()) fail("train: dataset is empty");
  if (cfg.batch_size < 1) fail("train: batch_size must be >= 1");
  const Shape& want = g.nodes[static_cast<std::size_t>(g.input_node)].out_shape;
  for (const auto& s : ds) {
    if (s.input.shape() != want) {
      fail("train: sample '" + s.id + "' has shape " + s.input.shape().str() +
           ", graph expects " + want.str());
    }
  }

  TrainLog log;
  std::int64_t steps = 0;
  double prev_loss = 0.0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = detail::epoch_rng(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    bool step_cap_hit = false;
    for (std::size_t b = 0; b < order.size();
         b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bn =
          std::min(order.size() - b, static_cast<std::size_t>(cfg.batch_size));

      std::vector<double> sample_loss(bn, 0.0);
      std::vector<std::vector<ParamGrad<T>>> sample_grads(bn);
      auto run_sample = [&](std::size_t k) {
        const auto& s = ds[order[b + k]];
        auto fwd = graph_forward(g, s.input, true);
        auto bce = bce_loss(fwd.output(g), s.target);
        sample_loss[k] = static_cast<double>(bce.loss);
        sample_grads[k] = graph_backward(g, fwd, bce.grad);
      };
      if (cfg.threads <= 1 || bn == 1) {
        for (std::size_t k = 0; k < bn; ++k) run_sample(k);
      } else {
        std::vector<std::thread> pool;
        const std::size_t nthreads =
            std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), bn);
        for (std::size_t t = 0; t < nthreads; ++t) {
          pool.emplace_back([&, t]() {
            for (std::size_t k = t; k < bn; k += nthreads) run_sample(k);
          });
        }
        for (auto& th : pool) th.join();
      }

      // Fixed summation order over sample index.
      std::vector<ParamGrad<T>> acc = std::move(sample_grads[0]);
      for (std::size_t k = 1; k < bn; ++k) {
        for (std::size_t pi = 0; pi < acc.size(); ++pi) {
          for (std::int64_t i = 0; i < acc[pi].weights.numel(); ++i) {
            acc[pi].weights[i] += sample_grads[k][pi].weights[i];
          }
          for (std::int64_t i = 0; i < acc[pi].bias.numel(); ++i) {
            acc[pi].bias[i] += sample_grads[k][pi].bias[i];
          }
        }
      }
      const T inv = static_cast<T>(1.0 / static_cast<double>(bn));
      for (auto& pg : acc) {
        for (std::int64_t i = 0; i < pg.weights.numel(); ++i) {
          pg.weights[i] *= inv;
        }
        for (std::int64_t i = 0; i < pg.bias.numel(); ++i) pg.bias[i] *= inv;
      }
      adam_step(st, g, acc);
      for (std::size_t k = 0; k < bn; ++k) loss_sum += sample_loss[k];
      seen += bn;
      ++steps;
      if (cfg.max_steps > 0 && steps >= cfg.max_steps) {
        step_cap_hit = true;
        break;
      }
    }

    const double loss = loss_sum / static_cast<double>(seen);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    const bool stop_early =
        epoch >= 2 && std::abs(loss - prev_loss) < cfg.stop_delta;
    log.entries.push_back({epoch, loss, secs, stop_early});
    prev_loss = loss;
    if (stop_early || step_cap_hit) break;
  }
  return log;
}

}  // namespace onet
