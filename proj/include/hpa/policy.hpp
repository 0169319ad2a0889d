#pragma once

// Policy and value approximators with hand-derived gradients, the clipped
// PPO surrogate, clipped value loss, GAE, an Adam/SGD optimizer, and the
// binary checkpoint format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpa/error.hpp"
#include "hpa/rng.hpp"

namespace hpa {

enum class ApproximatorKind : std::uint32_t { tabular = 0, linear = 1, mlp = 2 };

inline const char* to_string(ApproximatorKind k) {
  switch (k) {
    case ApproximatorKind::tabular: return "tabular";
    case ApproximatorKind::linear: return "linear";
    case ApproximatorKind::mlp: return "mlp";
  }
  return "?";
}

inline ApproximatorKind parse_approximator_kind(const std::string& s) {
  if (s == "tabular") return ApproximatorKind::tabular;
  if (s == "linear") return ApproximatorKind::linear;
  if (s == "mlp") return ApproximatorKind::mlp;
  throw ValidationError("approximator: unknown kind '" + s + "'");
}

/// Discrete index (tabular) and/or feature vector (linear, mlp).
struct Input {
  std::size_t index = 0;
  std::vector<double> features;
};

struct Shape {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Maps an Input to `outputs` real values (logits for policies, one value
/// for critics). Parameters are one flat vector; see shapes() for layout.
class Approximator {
 public:
  Approximator() = default;

  static Approximator tabular(std::size_t inputs, std::size_t outputs) {
    Approximator a(ApproximatorKind::tabular, inputs, 0, outputs);
    return a;
  }

  static Approximator linear(std::size_t features, std::size_t outputs) {
    return Approximator(ApproximatorKind::linear, features, 0, outputs);
  }

  /// One tanh hidden layer; weights uniform in +-1/sqrt(fan_in), biases 0.
  static Approximator mlp(std::size_t features, std::size_t hidden,
                          std::size_t outputs, Rng& rng) {
    Approximator a(ApproximatorKind::mlp, features, hidden, outputs);
    const double r1 = 1.0 / std::sqrt(static_cast<double>(features));
    const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < hidden * features; ++i)
      a.params_[i] = rng.uniform(-r1, r1);
    const std::size_t w2 = hidden * features + hidden;
    for (std::size_t i = 0; i < outputs * hidden; ++i)
      a.params_[w2 + i] = rng.uniform(-r2, r2);
    return a;
  }

  static Approximator from_shapes(ApproximatorKind kind,
                                  const std::vector<Shape>& shapes) {
    auto bad = [] { return ValidationError("checkpoint: inconsistent shapes"); };
    switch (kind) {
      case ApproximatorKind::tabular:
        if (shapes.size() != 1) throw bad();
        return tabular(shapes[0].rows, shapes[0].cols);
      case ApproximatorKind::linear:
        if (shapes.size() != 2 || shapes[1] != Shape{shapes[0].rows, 1})
          throw bad();
        return linear(shapes[0].cols, shapes[0].rows);
      case ApproximatorKind::mlp:
        if (shapes.size() != 4 || shapes[1] != Shape{shapes[0].rows, 1} ||
            shapes[2].cols != shapes[0].rows ||
            shapes[3] != Shape{shapes[2].rows, 1})
          throw bad();
        return Approximator(ApproximatorKind::mlp, shapes[0].cols,
                            shapes[0].rows, shapes[2].rows);
    }
    throw bad();
  }

  ApproximatorKind kind() const { return kind_; }
  std::size_t inputs() const { return inputs_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t outputs() const { return outputs_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::vector<Shape> shapes() const {
    switch (kind_) {
      case ApproximatorKind::tabular:
        return {{inputs_, outputs_}};
      case ApproximatorKind::linear:
        return {{outputs_, inputs_}, {outputs_, 1}};
      case ApproximatorKind::mlp:
        return {{hidden_, inputs_}, {hidden_, 1}, {outputs_, hidden_}, {outputs_, 1}};
    }
    return {};
  }

  void forward(const Input& in, std::span<double> out) const {
    check_input(in);
    switch (kind_) {
      case ApproximatorKind::tabular: {
        const double* row = params_.data() + in.index * outputs_;
        std::copy(row, row + outputs_, out.begin());
        break;
      }
      case ApproximatorKind::linear: {
        const double* W = params_.data();
        const double* b = W + outputs_ * inputs_;
        for (std::size_t o = 0; o < outputs_; ++o) {
          double v = b[o];
          for (std::size_t i = 0; i < inputs_; ++i)
            v += W[o * inputs_ + i] * in.features[i];
          out[o] = v;
        }
        break;
      }
      case ApproximatorKind::mlp: {
        std::vector<double> h(hidden_);
        hidden_activations(in, h);
        const double* W2 = params_.data() + hidden_ * inputs_ + hidden_;
        const double* b2 = W2 + outputs_ * hidden_;
        for (std::size_t o = 0; o < outputs_; ++o) {
          double v = b2[o];
          for (std::size_t j = 0; j < hidden_; ++j) v += W2[o * hidden_ + j] * h[j];
          out[o] = v;
        }
        break;
      }
    }
  }

  std::vector<double> forward(const Input& in) const {
    std::vector<double> out(outputs_);
    forward(in, out);
    return out;
  }

  /// Accumulates d(loss)/d(params) into grad given d(loss)/d(outputs).
  void backward(const Input& in, std::span<const double> dout,
                std::span<double> grad) const {
    check_input(in);
    switch (kind_) {
      case ApproximatorKind::tabular: {
        double* row = grad.data() + in.index * outputs_;
        for (std::size_t o = 0; o < outputs_; ++o) row[o] += dout[o];
        break;
      }
      case ApproximatorKind::linear: {
        double* gW = grad.data();
        double* gb = gW + outputs_ * inputs_;
        for (std::size_t o = 0; o < outputs_; ++o) {
          gb[o] += dout[o];
          for (std::size_t i = 0; i < inputs_; ++i)
            gW[o * inputs_ + i] += dout[o] * in.features[i];
        }
        break;
      }
      case ApproximatorKind::mlp: {
        std::vector<double> h(hidden_);
        hidden_activations(in, h);
        const std::size_t off_b1 = hidden_ * inputs_;
        const std::size_t off_W2 = off_b1 + hidden_;
        const std::size_t off_b2 = off_W2 + outputs_ * hidden_;
        const double* W2 = params_.data() + off_W2;
        std::vector<double> dh(hidden_, 0.0);
        for (std::size_t o = 0; o < outputs_; ++o) {
          grad[off_b2 + o] += dout[o];
          for (std::size_t j = 0; j < hidden_; ++j) {
            grad[off_W2 + o * hidden_ + j] += dout[o] * h[j];
            dh[j] += dout[o] * W2[o * hidden_ + j];
          }
        }
        for (std::size_t j = 0; j < hidden_; ++j) {
          const double dz = dh[j] * (1.0 - h[j] * h[j]);
          grad[off_b1 + j] += dz;
          for (std::size_t i = 0; i < inputs_; ++i)
            grad[j * inputs_ + i] += dz * in.features[i];
        }
        break;
      }
    }
  }

  bool finite() const {
    return std::all_of(params_.begin(), params_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Approximator&, const Approximator&) = default;

 private:
  Approximator(ApproximatorKind kind, std::size_t inputs, std::size_t hidden,
               std::size_t outputs)
      : kind_(kind), inputs_(inputs), hidden_(hidden), outputs_(outputs) {
    if (inputs == 0 || outputs == 0 || (kind == ApproximatorKind::mlp && hidden == 0))
      throw ValidationError("approximator: dimensions must be positive");
    std::size_t n = 0;
    for (const Shape& s : shapes()) n += s.rows * s.cols;
    params_.assign(n, 0.0);
  }

  void check_input(const Input& in) const {
    if (kind_ == ApproximatorKind::tabular) {
      if (in.index >= inputs_)
        throw ValidationError("input: index " + std::to_string(in.index) +
                              " out of range (" + std::to_string(inputs_) + ")");
    } else if (in.features.size() != inputs_) {
      throw ValidationError("input: expected " + std::to_string(inputs_) +
                            " features, got " + std::to_string(in.features.size()));
    }
  }

  void hidden_activations(const Input& in, std::span<double> h) const {
    const double* W1 = params_.data();
    const double* b1 = W1 + hidden_ * inputs_;
    for (std::size_t j = 0; j < hidden_; ++j) {
      double z = b1[j];
      for (std::size_t i = 0; i < inputs_; ++i) z += W1[j * inputs_ + i] * in.features[i];
      h[j] = std::tanh(z);
    }
  }

  ApproximatorKind kind_ = ApproximatorKind::tabular;
  std::size_t inputs_ = 0;
  std::size_t hidden_ = 0;
  std::size_t outputs_ = 0;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Distributions and scalar losses

struct ActionDistribution {
  std::vector<double> probs;

  double log_prob(std::size_t a) const { return std::log(probs.at(a)); }

  std::size_t greedy() const {
    return static_cast<std::size_t>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

inline ActionDistribution softmax(std::span<const double> logits) {
  ActionDistribution d;
  d.probs.resize(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericalError("softmax: non-finite logit");
    mx = std::max(mx, z);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.probs[i] = std::exp(logits[i] - mx);
    s += d.probs[i];
  }
  for (double& p : d.probs) p /= s;
  return d;
}

inline ActionDistribution forward_policy(const Approximator& policy, const Input& in) {
  return softmax(policy.forward(in));
}

inline double entropy(const ActionDistribution& d) {
  double s = 0.0;
  for (double p : d.probs)
    if (p > 0.0) s -= p * std::log(p);
  return s;
}

/// min(r A, clip(r, 1-eps, 1+eps) A); to be maximized.
inline double ppo_clip_term(double ratio, double advantage, double eps) {
  if (!(ratio > 0.0)) throw ValidationError("ppo: ratio must be positive");
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

/// max[(v - t)^2, (clip(v, v_old - eps, v_old + eps) - t)^2].
inline double value_clip_loss(double v_new, double v_old, double target, double eps) {
  const double clipped = std::clamp(v_new, v_old - eps, v_old + eps);
  return std::max((v_new - target) * (v_new - target),
                  (clipped - target) * (clipped - target));
}

/// Generalized advantage estimates. `values` carries one extra bootstrap
/// slot (0 after a terminal step).
inline std::vector<double> gae_advantages(std::span<const double> rewards,
                                          std::span<const double> values,
                                          double gamma, double lambda) {
  if (values.size() != rewards.size() + 1)
    throw ValidationError("gae: values must have length T+1");
  std::vector<double> adv(rewards.size());
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + gamma * values[t + 1] - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

// ---------------------------------------------------------------------------
// Composed losses and their gradients

/// One summand of a loss: evaluates its value from the approximator outputs
/// at `input` and writes d(value)/d(outputs) into `dout`.
struct LossTerm {
  Input input;
  std::function<double(std::span<const double> out, std::span<double> dout)> fn;
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

inline double evaluate_loss(const Approximator& net, const std::vector<LossTerm>& terms) {
  double total = 0.0;
  std::vector<double> dout(net.outputs());
  for (const auto& t : terms) total += t.fn(net.forward(t.input), dout);
  return total;
}

/// Analytic gradient of sum(terms) with respect to the approximator's
/// parameters.
inline LossGradient gradient(const Approximator& net, const std::vector<LossTerm>& terms) {
  LossGradient out;
  out.grad.assign(net.params().size(), 0.0);
  std::vector<double> dout(net.outputs());
  for (const auto& t : terms) {
    std::fill(dout.begin(), dout.end(), 0.0);
    out.loss += t.fn(net.forward(t.input), dout);
    net.backward(t.input, dout, out.grad);
  }
  for (double g : out.grad)
    if (!std::isfinite(g)) throw NumericalError("gradient: non-finite value");
  return out;
}

/// Value log pi(a | input); gradient onehot(a) - p.
inline LossTerm log_prob_term(Input input, std::size_t action) {
  return {std::move(input), [action](std::span<const double> z, std::span<double> dz) {
            const auto d = softmax(z);
            for (std::size_t j = 0; j < z.size(); ++j)
              dz[j] = (j == action ? 1.0 : 0.0) - d.probs[j];
            return std::log(d.probs[action]);
          }};
}

/// -weight * (L_clip + eta * S): the negated clipped surrogate with entropy
/// bonus, in minimization form.
inline LossTerm policy_surrogate_term(Input input, std::size_t action, double old_log_prob,
                                      double advantage, double eps, double eta,
                                      double weight = 1.0) {
  return {std::move(input), [=](std::span<const double> z, std::span<double> dz) {
            const auto d = softmax(z);
            const double ratio = std::exp(std::log(d.probs[action]) - old_log_prob);
            const double clip_value = ppo_clip_term(ratio, advantage, eps);
            // The unclipped branch carries the gradient whenever it is the min.
            const double dratio = ratio * advantage <= clip_value ? advantage : 0.0;
            const double S = entropy(d);
            for (std::size_t j = 0; j < z.size(); ++j) {
              const double dlogp = (j == action ? 1.0 : 0.0) - d.probs[j];
              const double dS = d.probs[j] > 0.0 ? -d.probs[j] * (std::log(d.probs[j]) + S) : 0.0;
              dz[j] = -weight * (dratio * ratio * dlogp + eta * dS);
            }
            return -weight * (clip_value + eta * S);
          }};
}

/// weight * value_clip_loss on a single-output critic.
inline LossTerm value_term(Input input, double v_old, double target, double eps,
                           double weight = 1.0) {
  return {std::move(input), [=](std::span<const double> z, std::span<double> dz) {
            const double v = z[0];
            const double clipped = std::clamp(v, v_old - eps, v_old + eps);
            const double a = (v - target) * (v - target);
            const double b = (clipped - target) * (clipped - target);
            if (a >= b) {
              dz[0] = weight * 2.0 * (v - target);
            } else {
              const bool inside = v > v_old - eps && v < v_old + eps;
              dz[0] = inside ? weight * 2.0 * (clipped - target) : 0.0;
            }
            return weight * std::max(a, b);
          }};
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double learning_rate = 0.01;
  bool adam = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Minimizes: params -= step(grad).
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig cfg, std::size_t size)
      : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::vector<double>& params, std::span<const double> grad) {
    if (!cfg_.adam) {
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= cfg_.learning_rate * grad[i];
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers and floats little-endian):
//   8 bytes  magic "HPACKPT\0"
//   u32      format version
//   u32      approximator kind
//   u64      seed
//   u32      shape count, then (u64 rows, u64 cols) per shape
//   u64      parameter count, then that many IEEE-754 binary64 values

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'H', 'P', 'A', 'C', 'K', 'P', 'T', '\0'};

struct Checkpoint {
  Approximator net;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw ValidationError("checkpoint: truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Approximator& net, std::uint64_t seed) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.kind()));
  detail::put_le<std::uint64_t>(out, seed);
  const auto shapes = net.shapes();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shapes.size()));
  for (const auto& s : shapes) {
    detail::put_le<std::uint64_t>(out, s.rows);
    detail::put_le<std::uint64_t>(out, s.cols);
  }
  detail::put_le<std::uint64_t>(out, net.params().size());
  for (double v : net.params()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    detail::put_le<std::uint64_t>(out, bits);
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw ValidationError("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  const auto kind_raw = detail::get_le<std::uint32_t>(in);
  if (kind_raw > 2) throw ValidationError("checkpoint: unknown kind");
  Checkpoint ck;
  ck.seed = detail::get_le<std::uint64_t>(in);
  const auto nshapes = detail::get_le<std::uint32_t>(in);
  if (nshapes > 16) throw ValidationError("checkpoint: too many shapes");
  std::vector<Shape> shapes(nshapes);
  for (auto& s : shapes) {
    s.rows = detail::get_le<std::uint64_t>(in);
    s.cols = detail::get_le<std::uint64_t>(in);
  }
  ck.net = Approximator::from_shapes(static_cast<ApproximatorKind>(kind_raw), shapes);
  const auto count = detail::get_le<std::uint64_t>(in);
  if (count != ck.net.params().size())
    throw ValidationError("checkpoint: parameter count does not match shapes");
  for (auto& v : ck.net.params()) {
    const auto bits = detail::get_le<std::uint64_t>(in);
    std::memcpy(&v, &bits, sizeof bits);
  }
  return ck;
}

}  // namespace hpa
