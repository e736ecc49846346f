#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "corrmlp/tensor.hpp"

namespace corrmlp {

struct VarNode {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

/// Shared handle to a value that may take part in reverse-mode differentiation.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated so far; empty tensor if none reached this value.
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() const { return node_->grad_buffer(); }

  const std::shared_ptr<VarNode>& node() const { return node_; }

 private:
  std::shared_ptr<VarNode> node_;
};

/// Ordered record of executed differentiable ops. Confined to one thread.
class Tape {
 public:
  void record(std::shared_ptr<VarNode> output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse.
  /// Intermediate gradients are reset first, so repeated calls accumulate
  /// only into leaves (parameters).
  void backward(const Var& loss);

  void clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<VarNode> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

void backward(Tape& tape, const Var& loss);

/// Tape that ops record onto on this thread, or nullptr (inference mode).
Tape* active_tape();

/// Makes `tape` the active tape for the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars) {
    if (v->requires_grad()) return true;
  }
  return false;
}

/// Wraps an op result; attaches `rule` to the active tape when a gradient
/// can flow. `rule` receives the output gradient.
template <class Rule>
Var finish(Tensor value, bool needs_grad, Rule&& rule) {
  Tape* tape = active_tape();
  Var out(std::move(value), needs_grad && tape != nullptr);
  if (out.requires_grad()) {
    VarNode* raw = out.node().get();
    tape->record(out.node(), [raw, rule = std::forward<Rule>(rule)]() mutable {
      if (!raw->grad.empty()) rule(raw->grad);
    });
  }
  return out;
}

}  // namespace detail

struct Parameter {
  std::string name;
  Var var;
  const Tensor& value() const { return var.value(); }
  const Tensor& grad() const { return var.grad(); }
};

/// Named, ordered collection of learnable arrays.
class ParamStore {
 public:
  /// Registers a new learnable array; names must be unique.
  Var add(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Parameter& get(const std::string& name) const;
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<std::string> names() const;
  int64_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace corrmlp
