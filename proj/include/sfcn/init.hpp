#pragma once

#include <cmath>
#include <stdexcept>

#include "sfcn/rng.hpp"
#include "sfcn/tensor.hpp"

namespace sfcn {

// Xavier-uniform bound: sqrt(6 / (fan_in + fan_out)). For convolution
// kernels the fans include the receptive-field size.
inline double xavier_bound(const Shape& shape) {
    if (shape.size() == 2) {
        return std::sqrt(6.0 / (shape[1] + shape[0]));
    }
    if (shape.size() == 4) {
        const double rf = static_cast<double>(shape[2]) * shape[3];
        return std::sqrt(6.0 / (shape[1] * rf + shape[0] * rf));
    }
    throw std::invalid_argument("xavier_init: weight tensor must have rank 2 or 4");
}

inline Tensor xavier_init(const Shape& shape, Rng& rng) {
    const double b = xavier_bound(shape);
    Tensor t(shape);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.value()[i] = rng.uniform(-b, b);
    return t;
}

}  // namespace sfcn
