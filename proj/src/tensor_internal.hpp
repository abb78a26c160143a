#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "moa/tensor.hpp"

namespace moa::detail {

// Wraps freshly computed values in a node. Inputs and the backward rule are
// recorded only when grad mode is on and some input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace moa::detail
