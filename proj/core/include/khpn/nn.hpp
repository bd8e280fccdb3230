#pragma once

// Small shared building blocks: linear layers, SiLU perceptrons, and the
// named-parameter registry used for optimization and checkpointing.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "khpn/tensor.hpp"

namespace khpn {

struct Linear {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
};

inline Linear make_linear(int64_t in, int64_t out, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(out * in);
  for (auto& v : w) v = u(rng);
  return Linear{Tensor::from_data({out, in}, std::move(w), true),
                Tensor::zeros({out}, true)};
}

inline Tensor linear(const Tensor& x, const Linear& l) {
  return add(matmul_nt(x, l.w), l.b);
}

// A stack of linear->SiLU layers (SiLU after every layer).
struct Mlp {
  std::vector<Linear> layers;
};

inline Mlp make_mlp(int64_t in, const std::vector<int64_t>& widths,
                    std::mt19937_64& rng) {
  Mlp m;
  int64_t cur = in;
  for (int64_t w : widths) {
    m.layers.push_back(make_linear(cur, w, rng));
    cur = w;
  }
  return m;
}

inline Tensor mlp_forward(const Tensor& x, const Mlp& m) {
  Tensor h = x;
  for (const auto& l : m.layers) h = silu(linear(h, l));
  return h;
}

// Ordered name -> tensor registry. Iteration order (lexicographic) fixes the
// optimizer update and checkpoint layout, which keeps runs reproducible.
struct ParamStore {
  std::map<std::string, Tensor> params;

  Tensor& add(const std::string& name, const Tensor& t) {
    auto [it, inserted] = params.emplace(name, t);
    if (!inserted)
      throw ContractError("ParamStore: duplicate parameter name " + name);
    return it->second;
  }

  void add_linear(const std::string& prefix, const Linear& l) {
    add(prefix + ".w", l.w);
    add(prefix + ".b", l.b);
  }

  void add_mlp(const std::string& prefix, const Mlp& m) {
    for (size_t i = 0; i < m.layers.size(); ++i)
      add_linear(prefix + ".l" + std::to_string(i), m.layers[i]);
  }

  void zero_grads() {
    for (auto& [name, t] : params) t.zero_grad();
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }
};

}  // namespace khpn
