#pragma once

// Experiment runners: spherical-harmonic regression with wide two-layer
// networks, sinusoid spectrum tracking with deep networks, and robustness of
// trained networks to random parameter perturbations.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pinet/autodiff.hpp"
#include "pinet/csv.hpp"
#include "pinet/errors.hpp"
#include "pinet/kernels.hpp"
#include "pinet/linalg.hpp"
#include "pinet/network_spec.hpp"
#include "pinet/networks.hpp"
#include "pinet/random.hpp"
#include "pinet/specfun.hpp"

namespace pinet::experiments {

using autodiff::Tensor;
using kernels::UnitVector;

// ---------------------------------------------------------------------------
// Shared measurement helpers

// |<residual, component>| / ||component||
inline double residual_projection(const std::vector<double>& residual, const std::vector<double>& component) {
  if (residual.size() != component.size()) throw ShapeError("residual_projection: length mismatch");
  double dot = 0.0, norm2 = 0.0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    dot += residual[i] * component[i];
    norm2 += component[i] * component[i];
  }
  if (!(norm2 > 0.0)) throw DegenerateComponent("residual_projection: component is identically zero");
  return std::abs(dot) / std::sqrt(norm2);
}

// Trailing mean over the last `window` entries (fewer at the start).
inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  if (window < 1) throw ConfigError("moving_average: window must be >= 1");
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window)) acc -= v[i - static_cast<std::size_t>(window)];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

enum class Crossing { Below, Above };

// Iteration of the first checkpoint whose value crosses the threshold.
inline std::optional<int> time_to_threshold(const std::vector<int>& checkpoints, const std::vector<double>& values,
                                            double threshold, Crossing dir) {
  for (std::size_t i = 0; i < values.size() && i < checkpoints.size(); ++i) {
    const bool hit = dir == Crossing::Below ? values[i] <= threshold : values[i] >= threshold;
    if (hit) return checkpoints[i];
  }
  return std::nullopt;
}

// (2/N) |sum_j v_j exp(-2 pi i k j / N)|
inline double dft_amplitude(const std::vector<double>& values, int k) {
  const std::size_t n = values.size();
  if (k < 1 || 2 * static_cast<std::size_t>(k) >= n)
    throw DomainError("dft_amplitude: frequency " + std::to_string(k) + " outside [1, N/2)");
  std::complex<double> acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    // Reduce k j mod N first so the angle is exact for large indices.
    const std::size_t r = (static_cast<std::size_t>(k) * j) % n;
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(n);
    acc += values[j] * std::polar(1.0, angle);
  }
  return 2.0 * std::abs(acc) / static_cast<double>(n);
}

inline std::vector<UnitVector> sample_sphere(int n, int d, CounterRng rng) {
  std::vector<UnitVector> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(UnitVector::random(d, rng));
  return out;
}

inline Tensor to_tensor(const std::vector<UnitVector>& points) {
  if (points.empty()) throw ShapeError("to_tensor: no points");
  const std::size_t dim = points.front().dim();
  Tensor t({points.size(), dim});
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) t[i * dim + j] = points[i][j];
  return t;
}

inline Tensor column(const std::vector<double>& v) { return Tensor({v.size(), 1}, v); }

// One recorded metric curve for one frequency or degree.
struct FrequencyTrace {
  int frequency = 0;
  std::vector<int> checkpoints;
  std::vector<double> values;
  std::vector<double> smoothed;  // empty when no smoothing applies
  std::optional<int> time_to_threshold;
};

// ---------------------------------------------------------------------------
// Spherical harmonics

enum class HarmonicNormalizer {
  DegreeCount,   // N(K) = |K|
  UnitVariance,  // N(K) = sqrt(sum_k A_k^2 / N(d, k)), so Var f* = 1
};

struct HarmonicTarget {
  int d = 0;
  std::vector<int> degrees;
  std::vector<double> amplitudes;
  std::vector<UnitVector> anchors;
  double normalizer = 1.0;

  // A_k C_k(<x, zeta_k>) / (C_k(1) N(K)) for the i-th degree.
  double component(std::size_t i, const UnitVector& x) const {
    if (x.dim() != static_cast<std::size_t>(d + 1)) throw DomainError("harmonic target: dimension mismatch");
    const double alpha = 0.5 * (d - 1);
    return amplitudes[i] * specfun::gegenbauer_normalized(alpha, degrees[i], x.dot(anchors[i])) / normalizer;
  }

  double operator()(const UnitVector& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < degrees.size(); ++i) s += component(i, x);
    return s;
  }
};

inline HarmonicTarget make_harmonic_target(int d, std::vector<int> degrees, std::vector<double> amplitudes,
                                           CounterRng rng,
                                           HarmonicNormalizer normalizer = HarmonicNormalizer::DegreeCount) {
  if (d < 2) throw ConfigError("harmonic target: d must be >= 2");
  if (degrees.empty()) throw ConfigError("harmonic target: empty degree set");
  if (amplitudes.empty()) amplitudes.assign(degrees.size(), 1.0);
  if (amplitudes.size() != degrees.size()) throw ConfigError("harmonic target: one amplitude per degree");
  HarmonicTarget t;
  t.d = d;
  t.degrees = std::move(degrees);
  t.amplitudes = std::move(amplitudes);
  for (std::size_t i = 0; i < t.degrees.size(); ++i) {
    if (t.degrees[i] < 0) throw ConfigError("harmonic target: negative degree");
    t.anchors.push_back(UnitVector::random(d, rng));
  }
  if (normalizer == HarmonicNormalizer::DegreeCount) {
    t.normalizer = static_cast<double>(t.degrees.size());
  } else {
    double v = 0.0;
    for (std::size_t i = 0; i < t.degrees.size(); ++i)
      v += t.amplitudes[i] * t.amplitudes[i] / static_cast<double>(specfun::harmonic_dim({d, t.degrees[i]}));
    t.normalizer = std::sqrt(v);
  }
  if (!(t.normalizer > 0.0)) throw ConfigError("harmonic target: normalizer must be positive");
  return t;
}

struct HarmonicsConfig {
  Architecture architecture = Architecture::TwoLayerPi;
  int width = 8192;
  int n = 1000;
  int d = 10;
  std::vector<int> degrees{1, 2, 4};
  std::vector<double> amplitudes;  // default: all ones
  HarmonicNormalizer normalizer = HarmonicNormalizer::DegreeCount;
  // Step size; when unset, n / (2 lambda_max) of the architecture's
  // closed-form NTK Gram on the training points, so the linearized residual
  // follows (I - K / lambda_max)^t.
  std::optional<double> learning_rate;
  std::optional<double> lr_multiplicative;  // defaults to the learning rate
  int iterations = 1500;
  int record_every = 1;
  int seeds = 5;
  int first_run = 0;
  std::uint64_t master_seed = 0;
  int smoothing = 20;
  double threshold = 0.5;  // fraction of the initial projection
  // When set, training ends at the first checkpoint where this degree's
  // projection has crossed the threshold.
  std::optional<int> stop_at_crossing;
  std::size_t chunk_rows = 10;  // see TrainConfig::chunk_rows
};

struct HarmonicRun {
  int run = 0;
  double learning_rate = 0.0;
  std::vector<FrequencyTrace> degrees;  // same order as config degrees
  double final_loss = 0.0;
};

inline double default_harmonics_lr(Architecture arch, const std::vector<UnitVector>& points) {
  const auto k = arch == Architecture::TwoLayerPi ? kernels::DotProductKernel::pi_kernel()
                                                  : kernels::DotProductKernel::standard_ntk();
  const double lambda = linalg::largest_eigenvalue(kernels::gram(k, points).entries);
  return static_cast<double>(points.size()) / (2.0 * lambda);
}

// Data points and anchors come from the (master_seed, run, "data") stream and
// are shared by every architecture; weights come from (master_seed, run, "init").
inline std::vector<HarmonicRun> run_harmonics(const HarmonicsConfig& cfg) {
  if (cfg.architecture != Architecture::TwoLayerReLU && cfg.architecture != Architecture::TwoLayerPi)
    throw UnsupportedArchitecture("harmonics: architecture must be two-layer ReLU or two-layer Pi-Net");
  if (cfg.n < 1 || cfg.seeds < 1 || cfg.iterations < 0 || cfg.record_every < 1)
    throw ConfigError("harmonics: n, seeds and record_every must be positive, iterations non-negative");

  std::vector<HarmonicRun> runs;
  for (int s = 0; s < cfg.seeds; ++s) {
    const int run_index = cfg.first_run + s;
    const CounterRng data = stream_for(cfg.master_seed, static_cast<std::uint64_t>(run_index), "data");
    const HarmonicTarget target =
        make_harmonic_target(cfg.d, cfg.degrees, cfg.amplitudes, data.split("anchors"), cfg.normalizer);
    const auto points = sample_sphere(cfg.n, cfg.d, data.split("points"));

    std::vector<std::vector<double>> components(target.degrees.size(), std::vector<double>(points.size()));
    std::vector<double> y(points.size(), 0.0);
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t k = 0; k < target.degrees.size(); ++k) {
        components[k][i] = target.component(k, points[i]);
        y[i] += components[k][i];
      }

    HarmonicRun run;
    run.run = run_index;
    run.learning_rate = cfg.learning_rate ? *cfg.learning_rate : default_harmonics_lr(cfg.architecture, points);
    NetworkSpec spec = cfg.architecture == Architecture::TwoLayerPi ? NetworkSpec::two_layer_pi(cfg.d + 1, cfg.width)
                                                                     : NetworkSpec::two_layer_relu(cfg.d + 1, cfg.width);
    networks::Network net =
        networks::build(spec, stream_for(cfg.master_seed, static_cast<std::uint64_t>(run_index), "init").key());

    networks::TrainConfig tc;
    tc.learning_rate = run.learning_rate;
    tc.lr_multiplicative = cfg.lr_multiplicative.value_or(run.learning_rate);
    tc.iterations = cfg.iterations;
    tc.record_every = cfg.record_every;
    tc.chunk_rows = cfg.chunk_rows;

    run.degrees.resize(target.degrees.size());
    for (std::size_t k = 0; k < target.degrees.size(); ++k) run.degrees[k].frequency = target.degrees[k];
    networks::StopRule stop;
    if (cfg.stop_at_crossing) {
      const auto pos = std::find(target.degrees.begin(), target.degrees.end(), *cfg.stop_at_crossing);
      if (pos == target.degrees.end()) throw ConfigError("harmonics: stop_at_crossing is not a target degree");
      const auto& watched = run.degrees[static_cast<std::size_t>(pos - target.degrees.begin())].values;
      stop = [&watched, &cfg](int) { return watched.back() <= cfg.threshold * watched.front(); };
    }
    std::vector<double> residual(points.size());
    const auto trace = networks::train_full_batch(
        net, to_tensor(points), column(y), tc,
        [&](int it, const Tensor& p) {
          for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = y[i] - p[i];
          for (std::size_t k = 0; k < components.size(); ++k) {
            run.degrees[k].checkpoints.push_back(it);
            run.degrees[k].values.push_back(residual_projection(residual, components[k]));
          }
        },
        false, stop);
    run.final_loss = trace.loss.back();
    for (auto& ft : run.degrees) {
      ft.smoothed = moving_average(ft.values, cfg.smoothing);
      ft.time_to_threshold = time_to_threshold(ft.checkpoints, ft.values, cfg.threshold * ft.values.front(),
                                               Crossing::Below);
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Sinusoids

struct SinusoidTarget {
  std::vector<int> frequencies;
  std::vector<double> amplitudes;
  std::vector<double> phases;
  int samples = 200;

  // sum_i A_i sin(2 pi k_i x + phi_i) on the grid x_j = j / N
  std::vector<double> values() const {
    std::vector<double> v(static_cast<std::size_t>(samples), 0.0);
    for (int j = 0; j < samples; ++j) {
      const double x = static_cast<double>(j) / samples;
      for (std::size_t i = 0; i < frequencies.size(); ++i)
        v[static_cast<std::size_t>(j)] +=
            amplitudes[i] * std::sin(2.0 * std::numbers::pi * frequencies[i] * x + phases[i]);
    }
    return v;
  }
};

inline SinusoidTarget make_sinusoid_target(std::vector<int> frequencies, std::vector<double> amplitudes, int samples,
                                           CounterRng rng) {
  if (frequencies.empty()) throw ConfigError("sinusoid target: no frequencies");
  if (amplitudes.empty()) amplitudes.assign(frequencies.size(), 1.0);
  if (amplitudes.size() != frequencies.size()) throw ConfigError("sinusoid target: one amplitude per frequency");
  std::vector<int> sorted = frequencies;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("sinusoid target: frequencies must be distinct");
  for (int k : frequencies)
    if (k < 1 || 2 * k >= samples) throw ConfigError("sinusoid target: frequency outside [1, N/2)");
  for (double a : amplitudes)
    if (!(a > 0.0)) throw ConfigError("sinusoid target: amplitudes must be positive");
  SinusoidTarget t;
  t.frequencies = std::move(frequencies);
  t.amplitudes = std::move(amplitudes);
  t.samples = samples;
  for (std::size_t i = 0; i < t.frequencies.size(); ++i)
    t.phases.push_back(2.0 * std::numbers::pi * rng.uniform());
  return t;
}

// Grid points j / N mapped affinely onto [-1, 1) when centered.
inline Tensor sinusoid_inputs(int samples, bool centered) {
  Tensor x({static_cast<std::size_t>(samples), 1});
  for (int j = 0; j < samples; ++j) {
    const double u = static_cast<double>(j) / samples;
    x[static_cast<std::size_t>(j)] = centered ? 2.0 * u - 1.0 : u;
  }
  return x;
}

inline std::vector<double> amplitude_ratios(const SinusoidTarget& t, const std::vector<double>& prediction) {
  std::vector<double> r(t.frequencies.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = dft_amplitude(prediction, t.frequencies[i]) / t.amplitudes[i];
  return r;
}

struct SinusoidsConfig {
  NetworkSpec network = NetworkSpec::mlp(1, 256, 6);
  std::vector<int> frequencies{5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
  std::vector<double> amplitudes;  // default: all ones
  int samples = 200;
  bool centered_input = true;
  double learning_rate = 1e-3;
  std::optional<double> lr_multiplicative;
  int iterations = 3000;
  int record_every = 100;
  int seeds = 5;
  int first_run = 0;
  std::uint64_t master_seed = 0;
  double threshold = 0.5;
};

struct SinusoidRun {
  int run = 0;
  std::vector<FrequencyTrace> frequencies;
  double final_loss = 0.0;
  std::optional<int> diverged_at;
  std::optional<networks::Network> trained;
  SinusoidTarget target;
};

// The target phases come from (master_seed, run, "target") and are shared
// across architectures; weights come from (master_seed, run, "init").
// A divergent run is reported with diverged_at set and no trained network.
inline std::vector<SinusoidRun> run_sinusoids(const SinusoidsConfig& cfg, bool keep_networks = false) {
  if (cfg.seeds < 1 || cfg.record_every < 1 || cfg.iterations < 0)
    throw ConfigError("sinusoids: seeds and record_every must be positive, iterations non-negative");
  if (cfg.network.input_dim != 1 || cfg.network.output_dim != 1)
    throw ConfigError("sinusoids: network must map R to R");
  if (cfg.network.kind == Architecture::TwoLayerReLU || cfg.network.kind == Architecture::TwoLayerPi)
    throw UnsupportedArchitecture("sinusoids: architecture must be mlp or pi-ncp");

  std::vector<SinusoidRun> runs;
  const Tensor x = sinusoid_inputs(cfg.samples, cfg.centered_input);
  for (int s = 0; s < cfg.seeds; ++s) {
    const auto run_index = static_cast<std::uint64_t>(cfg.first_run + s);
    SinusoidRun run;
    run.run = cfg.first_run + s;
    run.target = make_sinusoid_target(cfg.frequencies, cfg.amplitudes, cfg.samples,
                                      stream_for(cfg.master_seed, run_index, "target"));
    const std::vector<double> y = run.target.values();
    networks::Network net = networks::build(cfg.network, stream_for(cfg.master_seed, run_index, "init").key());

    networks::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.lr_multiplicative = cfg.lr_multiplicative;
    tc.iterations = cfg.iterations;
    tc.record_every = cfg.record_every;

    run.frequencies.resize(run.target.frequencies.size());
    for (std::size_t i = 0; i < run.frequencies.size(); ++i) run.frequencies[i].frequency = run.target.frequencies[i];
    std::vector<double> pred(y.size());
    try {
      const auto trace = networks::train_full_batch(net, x, column(y), tc, [&](int it, const Tensor& p) {
        pred.assign(p.data().begin(), p.data().end());
        const auto ratios = amplitude_ratios(run.target, pred);
        for (std::size_t i = 0; i < ratios.size(); ++i) {
          run.frequencies[i].checkpoints.push_back(it);
          run.frequencies[i].values.push_back(ratios[i]);
        }
      });
      run.final_loss = trace.loss.back();
      if (keep_networks) run.trained = std::move(net);
    } catch (const DivergenceError& e) {
      run.diverged_at = static_cast<int>(e.iteration());
      run.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
    for (auto& ft : run.frequencies)
      ft.time_to_threshold = time_to_threshold(ft.checkpoints, ft.values, cfg.threshold, Crossing::Above);
    runs.push_back(std::move(run));
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Robustness

struct RobustnessConfig {
  std::vector<double> deltas{0.0, 0.5, 1.0, 2.0, 4.0};
  int perturbations = 1;  // draws per delta
  std::uint64_t master_seed = 0;
  int run = 0;
  double convergence_threshold = 0.8;
  bool centered_input = true;
};

struct RetentionCell {
  double delta = 0.0;
  int draw = 0;
  std::vector<double> ratios;  // per target frequency
};

struct RetentionTable {
  std::vector<int> frequencies;
  std::vector<double> converged;  // ratios of the unperturbed network
  std::vector<RetentionCell> cells;
};

inline RetentionTable run_robustness(const networks::Network& converged, const SinusoidTarget& target,
                                     const RobustnessConfig& cfg) {
  const Tensor x = sinusoid_inputs(target.samples, cfg.centered_input);
  auto ratios_of = [&](networks::Network net) {
    const Tensor p = net.predict(x);
    return amplitude_ratios(target, p.data());
  };

  RetentionTable table;
  table.frequencies = target.frequencies;
  table.converged = ratios_of(converged);
  for (std::size_t i = 0; i < table.converged.size(); ++i)
    if (!(table.converged[i] > cfg.convergence_threshold))
      throw PreconditionError("robustness: checkpoint not converged at k=" + std::to_string(target.frequencies[i]) +
                              " (amplitude ratio " + csv::format_real(table.converged[i]) + ")");

  const CounterRng root = stream_for(cfg.master_seed, static_cast<std::uint64_t>(cfg.run), "perturb");
  for (std::size_t di = 0; di < cfg.deltas.size(); ++di)
    for (int draw = 0; draw < cfg.perturbations; ++draw) {
      const std::uint64_t seed = root.split(di).split(static_cast<std::uint64_t>(draw)).key();
      table.cells.push_back({cfg.deltas[di], draw, ratios_of(networks::perturb_parameters(converged, cfg.deltas[di], seed))});
    }
  return table;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_trace_header(std::ostream& os) { os << "run_id,seed,iteration,metric_name,frequency_or_degree,value\n"; }

inline void write_trace_rows(std::ostream& os, const std::string& run_id, std::uint64_t seed,
                             const std::string& metric, const FrequencyTrace& ft, bool smoothed = false) {
  const auto& vals = smoothed ? ft.smoothed : ft.values;
  for (std::size_t i = 0; i < vals.size(); ++i)
    os << run_id << ',' << seed << ',' << ft.checkpoints[i] << ',' << metric << ',' << ft.frequency << ','
       << csv::format_real(vals[i]) << '\n';
}

inline std::string optional_int(const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("NA"); }

}  // namespace pinet::experiments
