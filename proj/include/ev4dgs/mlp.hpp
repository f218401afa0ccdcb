#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "ev4dgs/core/rng.hpp"

namespace ev4dgs {

/// Fully connected ReLU network with a linear output layer. All weights live
/// in one flat vector so optimizers and checkpoints treat it as a single
/// parameter group. Layer l stores W (out x in, row-major) then b (out).
class Mlp {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t offset = 0;  // start of W; b follows at offset + in * out
  };

  /// Per-call activations needed by backward().
  struct Cache {
    std::vector<std::vector<double>> inputs;  // input of each layer (post-ReLU of the previous)
  };

  Mlp() = default;

  Mlp(int input_dim, int hidden_width, int hidden_layers, int output_dim) {
    if (input_dim < 1 || output_dim < 1 || hidden_layers < 0 || (hidden_layers > 0 && hidden_width < 1)) {
      throw std::invalid_argument("bad network shape");
    }
    int prev = input_dim;
    std::size_t offset = 0;
    for (int l = 0; l <= hidden_layers; ++l) {
      const int out = l == hidden_layers ? output_dim : hidden_width;
      layers_.push_back({prev, out, offset});
      offset += static_cast<std::size_t>(prev) * out + out;
      prev = out;
    }
    params.assign(offset, 0.0);
  }

  std::vector<double> params;

  int input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  int hidden_width() const { return layers_.size() > 1 ? layers_.front().out : 0; }
  int hidden_layers() const { return static_cast<int>(layers_.size()) - 1; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// He-normal hidden layers; the output layer gets small weights and a
  /// constant bias so the initial output is close to `output_bias`.
  void initialize(Rng& rng, double output_bias, double output_scale = 1e-2) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& L = layers_[l];
      const bool last = l + 1 == layers_.size();
      const double std = last ? output_scale : std::sqrt(2.0 / L.in);
      for (int i = 0; i < L.in * L.out; ++i) params[L.offset + i] = rng.normal(0.0, std);
      for (int o = 0; o < L.out; ++o) params[L.offset + L.in * L.out + o] = last ? output_bias : 0.0;
    }
  }

  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const {
    if (static_cast<int>(x.size()) != input_dim()) throw std::invalid_argument("network input size mismatch");
    std::vector<double> cur(x.begin(), x.end());
    if (cache) cache->inputs.clear();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& L = layers_[l];
      if (cache) cache->inputs.push_back(cur);
      std::vector<double> next(L.out);
      const double* W = params.data() + L.offset;
      const double* b = W + static_cast<std::size_t>(L.in) * L.out;
      for (int o = 0; o < L.out; ++o) {
        double s = b[o];
        const double* row = W + static_cast<std::size_t>(o) * L.in;
        for (int i = 0; i < L.in; ++i) s += row[i] * cur[i];
        next[o] = (l + 1 < layers_.size()) ? std::max(0.0, s) : s;
      }
      cur = std::move(next);
    }
    return cur;
  }

  /// Accumulates d(loss)/d(params) into `dparams` given d(loss)/d(output).
  void backward(const Cache& cache, std::span<const double> dout, std::span<double> dparams) const {
    std::vector<double> grad(dout.begin(), dout.end());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& L = layers_[l];
      const std::vector<double>& in = cache.inputs[l];
      const double* W = params.data() + L.offset;
      double* dW = dparams.data() + L.offset;
      double* db = dW + static_cast<std::size_t>(L.in) * L.out;
      std::vector<double> din(L.in, 0.0);
      for (int o = 0; o < L.out; ++o) {
        const double g = grad[o];
        if (g == 0.0) continue;
        db[o] += g;
        const double* row = W + static_cast<std::size_t>(o) * L.in;
        double* drow = dW + static_cast<std::size_t>(o) * L.in;
        for (int i = 0; i < L.in; ++i) {
          drow[i] += g * in[i];
          din[i] += g * row[i];
        }
      }
      if (l > 0) {
        // `in` is a ReLU output; zero means the unit was inactive.
        for (int i = 0; i < L.in; ++i)
          if (in[i] <= 0.0) din[i] = 0.0;
      }
      grad = std::move(din);
    }
  }

 private:
  std::vector<Layer> layers_;
};

}  // namespace ev4dgs
