#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "t2i/autograd.hpp"
#include "t2i/rng.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

template <class T>
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<T> data;
};

// Ordered collection of parameter tensors. Once frozen, every mutable accessor
// throws FrozenParamError.
template <class T>
class ParamSet {
 public:
  void add(std::string name, Shape shape, std::vector<T> data) {
    if (frozen_) throw FrozenParamError("cannot add '" + name + "' to frozen parameters");
    if (shape.numel() != data.size()) throw std::invalid_argument("ParamSet::add: size mismatch for " + name);
    tensors_.push_back({std::move(name), std::move(shape), std::move(data)});
  }

  const std::vector<NamedTensor<T>>& tensors() const { return tensors_; }
  const NamedTensor<T>& operator[](std::size_t i) const { return tensors_.at(i); }
  std::size_t size() const { return tensors_.size(); }

  std::vector<T>& mutable_data(std::size_t i) {
    if (frozen_) throw FrozenParamError("parameter '" + tensors_.at(i).name + "' is frozen");
    return tensors_.at(i).data;
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.data.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      for (T v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors_) out.add(t.name, t.shape, std::vector<U>(t.data.begin(), t.data.end()));
    if (frozen_) out.freeze();
    return out;
  }

  bool operator==(const ParamSet& o) const {
    if (tensors_.size() != o.tensors_.size() || frozen_ != o.frozen_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name != o.tensors_[i].name || !(tensors_[i].shape == o.tensors_[i].shape) ||
          tensors_[i].data != o.tensors_[i].data)
        return false;
    }
    return true;
  }

 private:
  std::vector<NamedTensor<T>> tensors_;
  bool frozen_ = false;
};

// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
std::vector<float> glorot_uniform(std::size_t count, int fan_in, int fan_out, Rng& rng);

// Puts every tensor of `ps` on the tape as a leaf, in declaration order.
template <class T>
std::vector<ag::Var> bind(ag::Tape<T>& tape, const ParamSet<T>& ps, bool trainable) {
  std::vector<ag::Var> vars;
  vars.reserve(ps.size());
  for (const auto& t : ps.tensors()) vars.push_back(tape.leaf(t.shape, t.data, trainable));
  return vars;
}

// Copies gradients of bound parameters into a ParamSet-shaped buffer list.
template <class T>
std::vector<std::vector<T>> collect_grads(const ag::Tape<T>& tape, const std::vector<ag::Var>& vars) {
  std::vector<std::vector<T>> out;
  out.reserve(vars.size());
  for (ag::Var v : vars) {
    auto g = tape.grad(v);
    if (g.empty()) {
      out.emplace_back(tape.value(v).size(), T(0));
    } else {
      out.emplace_back(g.begin(), g.end());
    }
  }
  return out;
}

}  // namespace t2i
