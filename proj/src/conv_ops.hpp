// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "fedpara/tensor.hpp"

namespace fedpara::detail {

struct Conv2dGrads {
    Tensor kernel;
    Tensor input;
};

Conv2dGrads conv2d_backward(const Tensor& kernel, const Tensor& input, std::size_t padding, const Tensor& grad_out);

/// Non-overlapping max pooling over B x C x H x W; trailing rows/cols that do
/// not fill a window are dropped. `argmax` receives flat input indices.
Tensor maxpool_forward(const Tensor& input, std::size_t window, std::vector<std::size_t>& argmax);
Tensor maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax, const Shape& input_shape);

}  // namespace fedpara::detail
