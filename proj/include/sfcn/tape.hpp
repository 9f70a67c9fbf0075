#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "sfcn/tensor.hpp"

namespace sfcn {

// Records the backward step of every op executed during a forward pass, in
// execution order. backward() replays the steps in reverse, which is a valid
// reverse-topological traversal of the graph. Each step adds into input
// gradient buffers; nothing is overwritten, so shared tensors accumulate
// contributions from all of their consumers.
template <typename Scalar>
class TapeT {
public:
    void record(std::function<void()> step) {
        if (used_)
            throw std::logic_error("tape already consumed by backward(); clear() before recording");
        steps_.push_back(std::move(step));
    }

    // Seeds d(loss)/d(loss) = 1 and runs all recorded steps in reverse.
    void backward(TensorT<Scalar>& loss) {
        if (used_)
            throw std::logic_error("backward() called twice on a stale graph; re-run forward first");
        if (loss.size() != 1) throw std::invalid_argument("backward() requires a scalar loss");
        used_ = true;
        loss.grad()[0] += Scalar(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() {
        steps_.clear();
        used_ = false;
    }

    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return used_; }

private:
    std::vector<std::function<void()>> steps_;
    bool used_ = false;
};

using Tape = TapeT<double>;

}  // namespace sfcn
