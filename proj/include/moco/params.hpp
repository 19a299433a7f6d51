#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moco/autograd.hpp"
#include "moco/tensor.hpp"

namespace moco {

/// Ordered collection of named parameter tensors. Insertion order is part of
/// the contract: optimizers and serializers iterate it deterministically.
class ParamSet {
 public:
  void add(std::string name, Tensor t) {
    check(!index_.count(name), ErrorCode::InvalidArgument, "duplicate parameter: " + name);
    index_[name] = items_.size();
    items_.emplace_back(std::move(name), std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    check(it != index_.end(), ErrorCode::InvalidArgument, "unknown parameter: " + name);
    return items_[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), ErrorCode::InvalidArgument, "unknown parameter: " + name);
    return items_[it->second].second;
  }

  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

/// Tape-bound view of a ParamSet.
struct VarSet {
  std::unordered_map<std::string, Var> vars;

  Var at(const std::string& name) const {
    auto it = vars.find(name);
    check(it != vars.end(), ErrorCode::InvalidArgument, "unknown parameter var: " + name);
    return it->second;
  }
};

inline VarSet lift(Tape& tape, const ParamSet& params, bool needs_grad = true) {
  VarSet vs;
  for (const auto& [name, t] : params) vs.vars[name] = tape.leaf(t, needs_grad);
  return vs;
}

inline std::map<std::string, Tensor> collect_grads(const Tape& tape, const ParamSet& params,
                                                   const VarSet& vs) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, t] : params) grads[name] = tape.grad(vs.at(name));
  return grads;
}

}  // namespace moco
