#pragma once

#include <functional>
#include <string>
#include <vector>

#include "foe/tape.hpp"

namespace foe::gradcheck {

constexpr double kTolerance = 1e-4;
constexpr double kStep = 1e-6;

// Builds a real scalar loss from the given leaves; called once for the
// analytic backward pass and repeatedly for finite-difference probes.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Report {
  std::string name;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  bool passed() const { return max_rel_err < kTolerance; }
};

// Central finite differences on every real component of every leaf; complex
// leaves are probed on both channels. max_per_leaf > 0 strides the probes to
// bound the cost on large leaves.
Report check(const std::string& name, const GraphFn& fn,
             const std::vector<Tensor>& leaf_values, double h = kStep,
             int64_t max_per_leaf = -1);

// Finite-difference checks of every differentiable primitive on small random
// inputs.
std::vector<Report> primitive_suite(uint64_t seed);

// The full differentiable pipeline: phase mask -> PSF stack -> imaging ->
// fixed-noise camera -> planewise networks -> loss, differentiated with
// respect to the mask and the network parameters on a 16-pixel mask,
// 8x8-camera, two-plane configuration.
Report pipeline_check(uint64_t seed);

}  // namespace foe::gradcheck
