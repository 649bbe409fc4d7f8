#pragma once

// Parameter storage, initializers, and the small set of layers the model is
// assembled from: affine maps, feed-forward stacks, post-norm Transformer
// encoder layers, and an AdamW optimizer.

#include "spottrip/autodiff.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spottrip {

using Rng = std::mt19937_64;

inline Matrix uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

/// Owns every trainable tensor of a model. Addresses are stable for the
/// lifetime of the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(std::string name, Matrix init, bool trainable = true) {
    if (by_name_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->value = std::move(init);
    p->trainable = trainable;
    p->zero_grad();
    Parameter& ref = *p;
    by_name_.emplace(ref.name, &ref);
    params_.push_back(std::move(p));
    return ref;
  }

  [[nodiscard]] Parameter& get(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return *it->second;
  }

  [[nodiscard]] bool contains(std::string_view name) const { return by_name_.contains(std::string(name)); }

  [[nodiscard]] std::vector<Parameter*> all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

namespace nn {

using ad::Tape;
using ad::Var;

enum class Activation { kTanh, kRelu, kSilu };

inline Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kRelu: return ad::relu(x);
    case Activation::kSilu: return ad::silu(x);
  }
  throw std::logic_error("unknown activation");
}

/// Row-vector convention: y = x W + b with W in (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = &store.add(name + ".weight", uniform_matrix(in, out, bound, rng));
    bias_ = &store.add(name + ".bias", uniform_matrix(1, out, bound, rng));
  }

  [[nodiscard]] Var operator()(Tape& tape, const Var& x) const {
    return ad::add_row(ad::matmul(x, tape.param(*weight_)), tape.param(*bias_));
  }

  [[nodiscard]] Parameter& weight() const { return *weight_; }
  [[nodiscard]] Parameter& bias() const { return *bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Three affine layers with a nonlinearity between them.
class Mlp3 {
 public:
  Mlp3() = default;
  Mlp3(ParameterStore& store, const std::string& name, Index in, Index hidden, Index out, Activation act, Rng& rng)
      : l1_(store, name + ".0", in, hidden, rng),
        l2_(store, name + ".1", hidden, hidden, rng),
        l3_(store, name + ".2", hidden, out, rng),
        act_(act) {}

  [[nodiscard]] Var operator()(Tape& tape, const Var& x) const {
    Var h = activate(l1_(tape, x), act_);
    h = activate(l2_(tape, h), act_);
    return l3_(tape, h);
  }

  [[nodiscard]] const Linear& last() const { return l3_; }

 private:
  Linear l1_, l2_, l3_;
  Activation act_ = Activation::kTanh;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index width) {
    gamma_ = &store.add(name + ".gamma", Matrix::Ones(1, width));
    beta_ = &store.add(name + ".beta", Matrix::Zero(1, width));
  }

  [[nodiscard]] Var operator()(Tape& tape, const Var& x) const {
    return ad::layer_norm_rows(x, tape.param(*gamma_), tape.param(*beta_));
  }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore& store, const std::string& name, Index width, Index heads, Rng& rng)
      : q_(store, name + ".q", width, width, rng),
        k_(store, name + ".k", width, width, rng),
        v_(store, name + ".v", width, width, rng),
        out_(store, name + ".out", width, width, rng),
        heads_(heads),
        head_width_(width / heads) {
    if (width % heads != 0) throw std::invalid_argument("attention width must be divisible by head count");
  }

  [[nodiscard]] Var operator()(Tape& tape, const Var& x) const {
    Var q = q_(tape, x);
    Var k = k_(tape, x);
    Var v = v_(tape, x);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width_));
    std::vector<Var> per_head;
    per_head.reserve(static_cast<std::size_t>(heads_));
    for (Index h = 0; h < heads_; ++h) {
      Var qh = ad::slice_cols(q, h * head_width_, head_width_);
      Var kh = ad::slice_cols(k, h * head_width_, head_width_);
      Var vh = ad::slice_cols(v, h * head_width_, head_width_);
      Var weights = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
      per_head.push_back(ad::matmul(weights, vh));
    }
    return out_(tape, ad::concat_cols(per_head));
  }

 private:
  Linear q_, k_, v_, out_;
  Index heads_ = 1;
  Index head_width_ = 1;
};

/// Post-norm encoder layer: x = LN(x + MHA(x)); x = LN(x + FF(x)).
class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParameterStore& store, const std::string& name, Index width, Index heads, Index ff_width,
                          Rng& rng)
      : attn_(store, name + ".attn", width, heads, rng),
        norm1_(store, name + ".norm1", width),
        ff1_(store, name + ".ff1", width, ff_width, rng),
        ff2_(store, name + ".ff2", ff_width, width, rng),
        norm2_(store, name + ".norm2", width) {}

  [[nodiscard]] Var operator()(Tape& tape, const Var& x) const {
    Var h = norm1_(tape, x + attn_(tape, x));
    Var ff = ff2_(tape, ad::relu(ff1_(tape, h)));
    return norm2_(tape, h + ff);
  }

 private:
  MultiHeadSelfAttention attn_;
  LayerNorm norm1_;
  Linear ff1_, ff2_;
  LayerNorm norm2_;
};

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, const std::string& name, Index layers, Index width, Index heads,
                     Index ff_width, Rng& rng) {
    for (Index i = 0; i < layers; ++i) {
      layers_.emplace_back(store, name + ".layer" + std::to_string(i), width, heads, ff_width, rng);
    }
  }

  [[nodiscard]] Var operator()(Tape& tape, Var x) const {
    for (const auto& layer : layers_) x = layer(tape, x);
    return x;
  }

  [[nodiscard]] std::size_t depth() const { return layers_.size(); }

 private:
  std::vector<TransformerEncoderLayer> layers_;
};

/// Fixed sinusoidal position code (rows = positions).
inline Matrix sinusoidal_positions(Index length, Index width) {
  Matrix pe(length, width);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

}  // namespace nn

/// Adam with decoupled weight decay. State is keyed by parameter name so it
/// survives checkpoint round trips.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
  };

  struct Moments {
    Matrix m;
    Matrix v;
  };

  AdamW() = default;
  explicit AdamW(Options opts) : opts_(opts) {}

  void step(const std::vector<Parameter*>& params) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      auto& st = moments_[p->name];
      if (st.m.size() == 0) {
        st.m = Matrix::Zero(p->value.rows(), p->value.cols());
        st.v = Matrix::Zero(p->value.rows(), p->value.cols());
      }
      if (opts_.lr == 0.0) continue;
      p->value *= (1.0 - opts_.lr * opts_.weight_decay);
      st.m = opts_.beta1 * st.m + (1.0 - opts_.beta1) * p->grad;
      st.v = opts_.beta2 * st.v + (1.0 - opts_.beta2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -= opts_.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + opts_.eps);
    }
  }

  [[nodiscard]] const Options& options() const { return opts_; }
  [[nodiscard]] long steps() const { return steps_; }
  [[nodiscard]] const std::map<std::string, Moments>& moments() const { return moments_; }

  void restore(long steps, std::map<std::string, Moments> moments) {
    steps_ = steps;
    moments_ = std::move(moments);
  }

 private:
  Options opts_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace spottrip
