#pragma once

#include <span>
#include <vector>

#include "mpft/autodiff/tape.hpp"

namespace mpft::ad::kernels {

// Forward evaluation of a recorded op. `saved` receives whatever the
// matching backward needs beyond inputs and output.
Tensor forward(OpKind kind, const OpAttrs& attrs, std::span<const Tensor* const> inputs,
               std::vector<double>& saved);

// Accumulates input gradients given the output gradient. `grads[i]` is null
// for inputs that do not need a gradient; non-null buffers are either empty
// (allocated here) or already sized to the input.
void backward(OpKind kind, const OpAttrs& attrs, std::span<const Tensor* const> inputs,
              const Tensor& output, std::span<const double> saved,
              std::span<const double> grad_out, std::span<std::vector<double>* const> grads);

double softplus(double x);
double sigmoid(double x);

}  // namespace mpft::ad::kernels
