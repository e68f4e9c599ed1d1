// Copyright 2026 The Splitformer C++ Authors
// Central finite-difference verification of tape gradients.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <vector>

#include "splitformer/tensor.hpp"

namespace splitformer {

// Builds a scalar loss from the given inputs. Must be a pure function of the
// inputs (fixed rng/eval mode) so repeated evaluation is exact.
using GraphBuilder = std::function<TensorD(const std::vector<TensorD>&)>;

// Runs one backward pass and compares every input element's gradient against
// the central difference (f(x+h) - f(x-h)) / 2h. Returns
//   max over elements of |tape - central| / (|central| + kGradCheckFloor).
// Verification precision only: the probe is meaningless in 32-bit.
inline constexpr double kGradCheckFloor = 1e-3;

double grad_check(const GraphBuilder& f, const std::vector<TensorD>& point,
                  double perturbation = 1e-5);

}  // namespace splitformer
