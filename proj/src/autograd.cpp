#include "corrmlp/autograd.hpp"

#include <stdexcept>

namespace corrmlp {

Tensor& VarNode::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void VarNode::accumulate(const Tensor& g) {
  Tensor& buf = grad_buffer();
  if (g.numel() != buf.numel()) {
    throw std::logic_error("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                           shape_str(buf.shape()));
  }
  double* dst = buf.ptr();
  const double* src = g.ptr();
  for (int64_t i = 0; i < buf.numel(); ++i) dst[i] += src[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<VarNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Tape::record(std::shared_ptr<VarNode> output, std::function<void()> backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  for (Entry& e : entries_) e.output->grad = Tensor();
  if (!loss.requires_grad()) return;
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
}

void backward(Tape& tape, const Var& loss) { tape.backward(loss); }

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Var v(std::move(init), true);
  v.grad_buffer();
  index_.emplace(name, params_.size());
  params_.push_back({name, v});
  return v;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value().numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.grad_buffer().fill(0.0);
}

}  // namespace corrmlp
