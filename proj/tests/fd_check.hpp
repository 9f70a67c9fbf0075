#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sfcn/rng.hpp"
#include "sfcn/tape.hpp"
#include "sfcn/tensor.hpp"

// Central finite-difference gradient check used as the independent oracle for
// every differentiable op: rebuilds the forward pass from scratch for each
// probe, so it never shares state with the backward path it verifies.
namespace fdtest {

using BuildLoss = std::function<sfcn::Tensor(sfcn::Tape&)>;

struct FdResult {
    double max_rel_err = 0.0;
    long checked = 0;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Checks d(loss)/d(param) for every listed parameter element (or a random
// subsample of max_per_tensor elements when positive).
inline FdResult check_gradients(std::vector<sfcn::Tensor> params, const BuildLoss& build_loss,
                                double eps = 1e-5, long max_per_tensor = -1,
                                std::uint64_t subsample_seed = 17) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    sfcn::Tape tape;
    sfcn::Tensor loss = build_loss(tape);
    tape.backward(loss);

    sfcn::Rng pick(subsample_seed);
    FdResult res;
    for (auto& p : params) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < p.size(); ++i) idx.push_back(i);
        if (max_per_tensor > 0 && static_cast<long>(idx.size()) > max_per_tensor) {
            pick.shuffle(idx);
            idx.resize(static_cast<std::size_t>(max_per_tensor));
        }
        for (Eigen::Index i : idx) {
            const double orig = p.value()[i];
            sfcn::Tape t_plus;
            p.value()[i] = orig + eps;
            const double f_plus = build_loss(t_plus).item();
            sfcn::Tape t_minus;
            p.value()[i] = orig - eps;
            const double f_minus = build_loss(t_minus).item();
            p.value()[i] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * eps);
            const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
            res.max_rel_err = std::max(res.max_rel_err, rel_err(fd, analytic));
            ++res.checked;
        }
    }
    return res;
}

inline sfcn::Tensor random_tensor(sfcn::Shape shape, sfcn::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    sfcn::Tensor t(std::move(shape));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.value()[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace fdtest
