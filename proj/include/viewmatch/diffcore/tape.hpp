// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "viewmatch/diffcore/tensor.hpp"

namespace viewmatch::diffcore {

template <typename T>
class Tape;

// Handle to a node recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
};

// Define-by-run record of one forward pass. Parameters and inputs are
// copied in as leaves, so the model that produced the tape is never mutated
// and any number of tapes may be built concurrently from the same model.
template <typename T>
class Tape {
 public:
  // Receives the tape and the index of the node whose gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), {}, {}, false); }
  Var<T> variable(Tensor<T> value) { return push("variable", std::move(value), {}, {}, true); }

  // Appends an operation node. The node requires a gradient iff any input does.
  Var<T> record(const char* kind, Tensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward) {
    bool needs = false;
    for (auto in : inputs) needs = needs || nodes_.at(in).requires_grad;
    return push(kind, std::move(value), std::move(inputs), std::move(backward), needs);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const char* kind(std::size_t id) const { return nodes_.at(id).kind; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() target with respect to node `id`;
  // zeros when the node was unreachable.
  Tensor<T> grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.size() == n.value.size() && !n.value.empty()) return n.grad;
    return Tensor<T>(n.value.shape());
  }

  // Mutable accumulation buffer, allocated on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
      n.grad = Tensor<T>(n.value.shape());
    }
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward target belongs to another tape");
    const Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_string(root.value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  void mark_output(std::string name, Var<T> v) { outputs_[std::move(name)] = v.id; }
  std::map<std::string, Tensor<T>> outputs() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : outputs_) out.emplace(name, nodes_.at(id).value);
    return out;
  }

  // Piecewise-linear ops report their switching pattern here so that a
  // finite-difference probe can tell when it stepped across a kink.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void note_kink_pattern(std::uint64_t pattern_hash, std::size_t exact_zero_count) {
    kink_signature_ = kink_signature_ * 0x100000001b3ULL ^ pattern_hash;
    exact_kinks_ += exact_zero_count;
  }
  std::uint64_t kink_signature() const { return kink_signature_; }
  std::size_t exact_kinks() const { return exact_kinks_; }

 private:
  struct Node {
    const char* kind;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  Var<T> push(const char* kind, Tensor<T> value, std::vector<std::size_t> inputs,
              BackwardFn backward, bool requires_grad) {
    if (!value.all_finite()) throw NonFiniteError(kind, nodes_.size());
    nodes_.push_back(Node{kind, std::move(value), Tensor<T>(), std::move(inputs),
                          std::move(backward), requires_grad});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> outputs_;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
  std::size_t exact_kinks_ = 0;
};

// Ordered collection of named tensors: model parameters, gradients, or
// optimizer moments.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  Tensor<T>& at(std::string_view name) { return entries_[lookup(name)].second; }
  const Tensor<T>& at(std::string_view name) const { return entries_[lookup(name)].second; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor<T>(t.shape()));
    return out;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

  bool operator==(const ParameterSet& other) const { return entries_ == other.entries_; }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameters placed on a tape as leaves.
template <typename T>
class Binding {
 public:
  Binding(Tape<T>& tape, const ParameterSet<T>& params, bool trainable = true) {
    for (const auto& [name, value] : params) {
      vars_.emplace(name, trainable ? tape.variable(value) : tape.constant(value));
      order_.push_back(name);
    }
  }

  Var<T> operator[](std::string_view name) const {
    auto it = vars_.find(std::string(name));
    if (it == vars_.end()) throw std::out_of_range("unbound parameter '" + std::string(name) + "'");
    return it->second;
  }
  bool contains(std::string_view name) const { return vars_.count(std::string(name)) > 0; }
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::unordered_map<std::string, Var<T>> vars_;
  std::vector<std::string> order_;
};

}  // namespace viewmatch::diffcore
