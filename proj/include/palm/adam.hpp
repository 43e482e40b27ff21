#pragma once

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "palm/tensor.hpp"

namespace palm {

// Named, block-tagged learnable tensor. Blocks drive the freeze schedules.
template <typename T>
struct Parameter {
  std::string name;
  char block = '?';
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, char block, Tensor<T> t) {
    if (index_.count(name)) throw ParameterError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = static_cast<int>(items_.size());
    items_.push_back(Parameter<T>{name, block, std::move(t), true});
    return items_.back().tensor;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return items_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return items_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  int set_block_trainable(char block, bool flag) {
    int n = 0;
    for (auto& p : items_)
      if (p.block == block) {
        p.trainable = flag;
        ++n;
      }
    return n;
  }

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, int> index_;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long t = 0;

  template <typename U>
  void init(const ParamStore<U>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params.items()) {
      m.emplace_back(p.tensor.numel(), T(0));
      v.emplace_back(p.tensor.numel(), T(0));
    }
    t = 0;
  }
};

// Bias-corrected Adam over a store. Frozen parameters are skipped entirely:
// values and moment buffers stay bit-identical. block_lr overrides the
// learning rate for every parameter carrying that block tag.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const std::map<char, double>& block_lr = {},
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != params.size()) throw ParameterError("adam_step: state not initialized for this store");
  state.t += 1;
  const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(state.t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(state.t)));
  for (size_t k = 0; k < params.items().size(); ++k) {
    auto& p = params.items()[k];
    if (!p.trainable) continue;
    double plr = lr;
    auto it = block_lr.find(p.block);
    if (it != block_lr.end()) plr = it->second;
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    auto& m = state.m[k];
    auto& v = state.v[k];
    auto& val = p.tensor.values();
    const auto& g = p.tensor.grad();
    for (size_t i = 0; i < val.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      T mh = m[i] / bc1;
      T vh = v[i] / bc2;
      val[i] -= static_cast<T>(plr) * mh / (std::sqrt(vh) + static_cast<T>(eps));
    }
  }
}

}  // namespace palm
