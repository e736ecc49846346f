#pragma once

// Finite-difference gradient verification of the primitive ops, the CMW-MLP
// building blocks and a micro network.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "corrmlp/autograd.hpp"
#include "corrmlp/rng.hpp"

namespace corrmlp::gradcheck {

enum class Scope { Ops, Blocks, Network, All };

Scope parse_scope(const std::string& s);
const char* to_string(Scope s);

struct Tolerance {
  double rtol = 1e-4;
  double atol = 1e-8;   // absolute floor for near-zero gradients
  double step = 1e-5;   // central-difference step (fourth-order stencil)
};

struct CheckResult {
  int64_t checked = 0;
  int64_t skipped = 0;  // entries with a kink inside the difference stencil
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  double max_grad = 0.0;  // largest |gradient| seen
  bool passed = true;
};

/// Compares reverse-mode gradients of sum(f() * R), R a fixed random tensor,
/// against central differences for up to `max_entries` entries of each leaf.
/// `f` must read the current values of `leaves`.
CheckResult check(const std::function<Var()>& f, const std::vector<Var>& leaves, Rng& rng, const Tolerance& tol,
                  int64_t max_entries);

struct Options {
  Scope scope = Scope::All;
  uint64_t seed = 0;
  int seeds = 5;
  double rtol_primitive = 1e-4;
  double rtol_network = 1e-3;
  int network_entries = 20;
  /// Adds a case built on an op with a deliberately wrong backward rule.
  bool inject_fault = false;
};

struct CaseResult {
  std::string suite;
  std::string name;
  uint64_t seed = 0;
  CheckResult result;
};

std::vector<CaseResult> run(const Options& opts);
bool all_passed(const std::vector<CaseResult>& results);

}  // namespace corrmlp::gradcheck
