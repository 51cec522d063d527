#pragma once

// Named trainable parameters. A ParamStore owns the parameters of one model
// component; names are unique within a store and double as checkpoint keys.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dfallm/nn/rng.hpp"
#include "dfallm/nn/tensor.hpp"

namespace dfallm::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;

  bool trainable() const { return value.requires_grad; }
  void set_trainable(bool on) {
    value.requires_grad = on;
    if (on) value.ensure_grad();
  }
  int64_t numel() const { return value.numel(); }
};

template <class T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, const std::vector<int>& shape) {
    if (index_.count(name)) throw UsageError("ParamStore: duplicate parameter '" + name + "'");
    auto p = std::make_shared<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>::zeros(shape, /*requires_grad=*/true);
    index_[name] = items_.size();
    items_.push_back(p);
    return *p;
  }

  Parameter<T>& add_normal(const std::string& name, const std::vector<int>& shape, Rng& rng,
                           double stddev, double mean = 0.0) {
    Parameter<T>& p = add(name, shape);
    for (auto& v : *p.value.data) v = static_cast<T>(rng.normal(mean, stddev));
    return p;
  }

  Parameter<T>& add_constant(const std::string& name, const std::vector<int>& shape, double v) {
    Parameter<T>& p = add(name, shape);
    std::fill(p.value.data->begin(), p.value.data->end(), static_cast<T>(v));
    return p;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  Parameter<T>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw UsageError("ParamStore: no parameter '" + name + "'");
    return *p;
  }

  // insertion (= construction) order, deterministic across runs
  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }
  std::vector<Parameter<T>*> trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : items_)
      if (p->trainable()) out.push_back(p.get());
    return out;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (auto& p : items_) n += p->numel();
    return n;
  }
  int64_t trainable_params() const {
    int64_t n = 0;
    for (auto& p : items_)
      if (p->trainable()) n += p->numel();
    return n;
  }

  void remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamStore: no parameter '" + name + "' to remove");
    items_.erase(items_.begin() + static_cast<long>(it->second));
    index_.clear();
    for (size_t i = 0; i < items_.size(); ++i) index_[items_[i]->name] = i;
  }

  void set_all_trainable(bool on) {
    for (auto& p : items_) p->set_trainable(on);
  }
  void zero_grads() {
    for (auto& p : items_) p->value.zero_grad();
  }
  size_t size() const { return items_.size(); }

 private:
  std::vector<std::shared_ptr<Parameter<T>>> items_;
  std::map<std::string, size_t> index_;
};

}  // namespace dfallm::nn
