#pragma once

// Network builders on top of the autodiff graph, full-batch gradient descent,
// isotropic parameter perturbation and binary checkpoints.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pinet/autodiff.hpp"
#include "pinet/errors.hpp"
#include "pinet/network_spec.hpp"
#include "pinet/random.hpp"

namespace pinet::networks {

using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;

struct Network {
  NetworkSpec spec;
  Graph graph;
  NodeId x = 0;       // input  [n x input_dim]
  NodeId y = 0;       // target [n x output_dim]
  NodeId output = 0;  // prediction [n x output_dim]
  NodeId loss = 0;    // mean squared error

  Tensor predict(const Tensor& inputs) { return graph.forward({{"x", inputs}}, output); }
};

namespace detail {

inline Tensor normal_tensor(autodiff::Shape shape, double stddev, CounterRng rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

inline NodeId draw_param(Graph& g, const std::string& name, autodiff::Shape shape, double stddev, CounterRng root,
                         bool multiplicative = false) {
  return g.param(name, normal_tensor(std::move(shape), stddev, root.split(name)), multiplicative);
}

inline void finish(Network& net, NodeId prediction) {
  net.output = prediction;
  net.y = net.graph.input("y", {autodiff::kAnyBatch, static_cast<std::size_t>(net.spec.output_dim)});
  net.loss = net.graph.mse(net.output, net.y);
}

}  // namespace detail

// Parameters are drawn from CounterRng(seed).split(parameter name).
//
// Two-layer kinds use standard-normal weights and no biases:
//   ReLU: f(x) = sqrt(2/m) W2 relu(W1 x)
//   Pi:   f(x) = sqrt(2/m) W3 [relu(W2 x) * relu(W1 x)]
// Deep kinds (MLP, PiNCP) use W ~ N(0, 2/fan_in) and b ~ N(0, 1/fan_in) on
// layers W1..WL. In a PiNCP multiplicative layer l the second branch is
// A_l z + c_l with A_l ~ N(0, 1/fan_in) and c_l = multiplicative_bias.
inline Network build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const CounterRng root(seed);
  Network net;
  net.spec = spec;
  Graph& g = net.graph;
  const auto in_dim = static_cast<std::size_t>(spec.input_dim);
  const auto m = static_cast<std::size_t>(spec.width);
  const auto out_dim = static_cast<std::size_t>(spec.output_dim);
  net.x = g.input("x", {autodiff::kAnyBatch, in_dim});

  if (spec.kind == Architecture::TwoLayerReLU || spec.kind == Architecture::TwoLayerPi) {
    const double scale = std::sqrt(2.0 / static_cast<double>(m));
    const NodeId w1 = detail::draw_param(g, "W1", {m, in_dim}, 1.0, root);
    NodeId hidden = g.relu(g.matmul_t(net.x, w1));
    NodeId w_out = 0;
    if (spec.kind == Architecture::TwoLayerPi) {
      const NodeId w2 = detail::draw_param(g, "W2", {m, in_dim}, 1.0, root, true);
      hidden = g.hadamard(g.relu(g.matmul_t(net.x, w2)), hidden);
      w_out = detail::draw_param(g, "W3", {out_dim, m}, 1.0, root);
    } else {
      w_out = detail::draw_param(g, "W2", {out_dim, m}, 1.0, root);
    }
    detail::finish(net, g.scale(g.matmul_t(hidden, w_out), scale));
    return net;
  }

  const bool relu = spec.activation == Activation::ReLU;
  NodeId h = net.x;
  std::size_t h_dim = in_dim;
  for (int l = 1; l <= spec.depth; ++l) {
    const bool last = l == spec.depth;
    const std::size_t out = last ? out_dim : m;
    const std::string tag = std::to_string(l);
    const double fan_in = static_cast<double>(h_dim);
    const NodeId w = detail::draw_param(g, "W" + tag, {out, h_dim}, std::sqrt(2.0 / fan_in), root);
    const NodeId b = detail::draw_param(g, "b" + tag, {out}, std::sqrt(1.0 / fan_in), root);
    NodeId pre = g.affine(h, w, b);

    NodeId next = 0;
    if (spec.kind == Architecture::PiNCP && spec.is_multiplicative(l)) {
      const bool from_input = spec.injection == InjectionSource::NetworkInput;
      const NodeId z = from_input ? net.x : h;
      const std::size_t z_dim = from_input ? in_dim : h_dim;
      const NodeId a = detail::draw_param(g, "A" + tag, {out, z_dim}, std::sqrt(1.0 / static_cast<double>(z_dim)),
                                          root, true);
      const NodeId c = g.param("c" + tag, Tensor({out}, spec.multiplicative_bias), true);
      const NodeId branch = g.affine(z, a, c);
      if (last || !relu)
        next = g.hadamard(pre, branch);
      else if (spec.placement == ActivationPlacement::AffineBranch)
        next = g.hadamard(g.relu(pre), branch);
      else
        next = g.relu(g.hadamard(pre, branch));
    } else {
      next = (last || !relu) ? pre : g.relu(pre);
    }

    if (spec.kind == Architecture::MLP && spec.additive_skips && !last && out == h_dim && l > 1)
      next = g.add(next, h);
    h = next;
    h_dim = out;
  }
  detail::finish(net, h);
  return net;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::optional<double> lr_multiplicative;  // learning_rate / 10 when unset
  int iterations = 1000;
  std::uint64_t seed = 0;
  int record_every = 100;
  // Rows evaluated per forward/backward pass; 0 takes the whole batch at once.
  // The step is still the full-batch gradient, accumulated chunk by chunk.
  std::size_t chunk_rows = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !(multiplicative_rate() >= 0.0))
      throw ConfigError("train: learning rates must be non-negative");
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (record_every < 1) throw ConfigError("train: record_every must be >= 1");
  }

  double multiplicative_rate() const { return lr_multiplicative.value_or(learning_rate / 10.0); }
};

struct TrainingTrace {
  std::vector<int> iterations;
  std::vector<double> loss;
  std::vector<std::vector<double>> snapshots;  // filled only when requested
};

// Called at each recorded iteration with the current predictions on X.
using RecordHook = std::function<void(int iteration, const Tensor& prediction)>;
// Checked after each recorded iteration; returning true ends training there.
using StopRule = std::function<bool(int iteration)>;

// `iterations` steps of full-batch gradient descent on the mean squared error.
// The loss is recorded before the step at every multiple of record_every and
// after the final step. Multiplicative-branch parameters move with
// lr_multiplicative, everything else with learning_rate.
inline TrainingTrace train_full_batch(Network& net, const Tensor& X, const Tensor& y, const TrainConfig& cfg,
                                      const RecordHook& hook = {}, bool keep_snapshots = false,
                                      const StopRule& stop = {}) {
  cfg.validate();
  if (X.rank() != 2 || y.rank() != 2 || X.rows() != y.rows())
    throw ShapeError("train: X and y must be [n x .] with equal n");
  const std::size_t n = X.rows();
  if (n == 0) throw ShapeError("train: empty batch");
  const std::size_t chunk = cfg.chunk_rows == 0 ? n : std::min(cfg.chunk_rows, n);

  // Each chunk's mean loss enters with weight rows / n, so the weighted sum of
  // chunk gradients is the gradient of the full-batch mean.
  struct Chunk {
    autodiff::Inputs inputs;
    std::size_t first;
    double weight;
  };
  auto rows_of = [](const Tensor& t, std::size_t first, std::size_t count) {
    const std::size_t w = t.cols();
    return Tensor({count, w}, std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(first * w),
                                                  t.data().begin() + static_cast<std::ptrdiff_t>((first + count) * w)));
  };
  std::vector<Chunk> chunks;
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    autodiff::Inputs in = count == n ? autodiff::Inputs{{"x", X}, {"y", y}}
                                     : autodiff::Inputs{{"x", rows_of(X, first, count)}, {"y", rows_of(y, first, count)}};
    chunks.push_back({std::move(in), first, static_cast<double>(count) / static_cast<double>(n)});
  }

  const double lr_mult = cfg.multiplicative_rate();
  TrainingTrace trace;
  Tensor prediction;
  autodiff::Gradients grads;

  for (int it = 0;; ++it) {
    const bool last = it == cfg.iterations;
    double loss = 0.0;
    for (const Chunk& c : chunks) {
      const double chunk_loss = net.graph.forward(c.inputs, net.loss)[0];
      const Tensor& out = net.graph.value(net.output);
      if (chunks.size() == 1) {
        loss = chunk_loss;
        prediction = out;
      } else {
        loss += c.weight * chunk_loss;
        prediction.reshape_storage({n, out.cols()});
        std::copy(out.data().begin(), out.data().end(),
                  prediction.data().begin() + static_cast<std::ptrdiff_t>(c.first * out.cols()));
      }
      if (last) continue;
      if (&c == &chunks.front())
        for (auto& [name, t] : grads) t.fill(0.0);
      net.graph.backward_into(net.loss, c.weight, grads);
    }
    if (!std::isfinite(loss)) throw DivergenceError(static_cast<std::size_t>(it), "train: non-finite loss");
    if (last || it % cfg.record_every == 0) {
      trace.iterations.push_back(it);
      trace.loss.push_back(loss);
      if (keep_snapshots) trace.snapshots.push_back(net.graph.flat_params());
      if (hook) hook(it, prediction);
      if (last || (stop && stop(it))) break;
    }
    for (const auto& p : net.graph.params()) {
      const double lr = p.multiplicative ? lr_mult : cfg.learning_rate;
      auto& v = net.graph.param_value(p.name).data();
      const auto& d = grads.at(p.name).data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * d[i];
    }
  }
  return trace;
}

// theta + delta * u with u uniform on the unit sphere of the flattened
// parameter space.
inline Network perturb_parameters(const Network& net, double delta, std::uint64_t seed) {
  if (!(delta >= 0.0)) throw ConfigError("perturb: delta must be >= 0");
  Network out = net;
  std::vector<double> theta = out.graph.flat_params();
  std::vector<double> u(theta.size());
  CounterRng rng = CounterRng(seed).split("perturb");
  double norm2 = 0.0;
  for (double& v : u) {
    v = rng.normal();
    norm2 += v * v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += delta * u[i] * inv;
  out.graph.set_flat_params(theta);
  return out;
}

// Checkpoint layout (all integers little-endian):
//   8 bytes magic "PINETCKP", u32 version, u64 spec hash, u64 tensor count,
//   then per tensor: u64 name length, name bytes, u64 rank, u64 dims..., f64 data.
inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'I', 'N', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(buf), sizeof buf);
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof buf)) throw ConfigError("checkpoint: truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Network& net, std::ostream& os) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, net.spec.hash());
  detail::put_le<std::uint64_t>(os, net.graph.params().size());
  for (const auto& p : net.graph.params()) {
    const Tensor& t = net.graph.param_value(p.name);
    detail::put_le<std::uint64_t>(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint64_t>(os, t.rank());
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (double v : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw ConfigError("checkpoint: write failed");
}

// Loads parameters into a network built from the same spec.
inline void load_checkpoint(Network& net, std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw ConfigError("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  if (detail::get_le<std::uint64_t>(is) != net.spec.hash()) throw ConfigError("checkpoint: network spec mismatch");
  const auto count = detail::get_le<std::uint64_t>(is);
  if (count != net.graph.params().size()) throw ConfigError("checkpoint: parameter count mismatch");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = detail::get_le<std::uint64_t>(is);
    if (len > 4096) throw ConfigError("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw ConfigError("checkpoint: truncated file");
    Tensor& t = net.graph.param_value(name);
    const auto rank = detail::get_le<std::uint64_t>(is);
    autodiff::Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint64_t>(is);
    if (shape != t.shape()) throw ConfigError("checkpoint: shape mismatch for '" + name + "'");
    for (double& v : t.data()) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  }
}

}  // namespace pinet::networks
