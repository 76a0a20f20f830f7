// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "afa/error.hpp"
#include "afa/linalg.hpp"

namespace afa {

// A named trainable tensor. Once frozen, the only way to change the value is
// to construct a new Param; mutable_value() throws.
class Param {
 public:
  Param() = default;
  Param(std::string name, Matrix value) : name_(std::move(name)), value_(std::move(value)) {}

  const std::string& name() const { return name_; }
  const Matrix& value() const { return value_; }

  Matrix& mutable_value() {
    if (frozen_) throw ContractError("parameter '" + name_ + "' is frozen");
    return value_;
  }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  // Restores the flag from a checkpoint.
  void set_frozen(bool f) { frozen_ = f; }

 private:
  std::string name_;
  Matrix value_;
  bool frozen_ = false;
};

// Ordered record of the parameters a loss evaluation may differentiate into,
// with gradient accumulators shaped like each parameter. Backward passes only
// write into parameters that were tracked; untracked parameters (frozen
// routers, the backbone, the adapter family not being trained) are skipped.
class GradientTape {
 public:
  struct Entry {
    Param* param;
    Matrix grad;
  };

  void track(Param& p) {
    if (p.frozen()) throw ContractError("cannot track frozen parameter '" + p.name() + "'");
    if (index_.count(&p)) return;
    index_.emplace(&p, entries_.size());
    entries_.push_back({&p, Matrix(p.value().rows(), p.value().cols())});
  }

  // nullptr when the parameter is not being differentiated.
  Matrix* grad_for(const Param& p) {
    auto it = index_.find(&p);
    return it == index_.end() ? nullptr : &entries_[it->second].grad;
  }

  bool tracks(const Param& p) const { return index_.count(&p) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<const Param*, std::size_t> index_;
};

}  // namespace afa
