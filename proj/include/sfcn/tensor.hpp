#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfcn {

using Shape = std::vector<int>;

inline Eigen::Index shape_numel(const Shape& shape) {
    Eigen::Index n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major n-d array with an optional gradient buffer of the same
// length. Copies are shallow: ops share storage through the handle, which is
// what lets the tape accumulate gradients into the right buffers.
template <typename Scalar>
class TensorT {
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    TensorT() = default;

    explicit TensorT(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<Data>()) {
        d_->shape = std::move(shape);
        d_->value = Array::Zero(shape_numel(d_->shape));
        d_->requires_grad = requires_grad;
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return TensorT(std::move(shape), requires_grad);
    }

    static TensorT full(Shape shape, Scalar v, bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        t.value().setConstant(v);
        return t;
    }

    static TensorT scalar(Scalar v, bool requires_grad = false) {
        return full({1}, v, requires_grad);
    }

    static TensorT from_values(Shape shape, std::initializer_list<Scalar> values,
                               bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        if (static_cast<Eigen::Index>(values.size()) != t.size())
            throw std::invalid_argument("from_values: element count does not match shape");
        Eigen::Index i = 0;
        for (Scalar v : values) t.value()[i++] = v;
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    Eigen::Index size() const { return d_->value.size(); }

    Array& value() { return d_->value; }
    const Array& value() const { return d_->value; }
    Scalar* data() { return d_->value.data(); }
    const Scalar* data() const { return d_->value.data(); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return d_->grad.size() == d_->value.size(); }

    // Gradient buffer, allocated as zeros on first access.
    Array& grad() {
        if (!has_grad()) d_->grad = Array::Zero(d_->value.size());
        return d_->grad;
    }
    const Array& grad() const {
        if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
        return d_->grad;
    }

    void zero_grad() {
        if (has_grad()) d_->grad.setZero();
    }
    void drop_grad() { d_->grad.resize(0); }

    // Row-major indexing.
    Scalar& operator()(int i0) { return d_->value[flat1(i0)]; }
    Scalar operator()(int i0) const { return d_->value[flat1(i0)]; }
    Scalar& operator()(int r, int c) { return d_->value[flat2(r, c)]; }
    Scalar operator()(int r, int c) const { return d_->value[flat2(r, c)]; }
    Scalar& operator()(int c, int h, int w) { return d_->value[flat3(c, h, w)]; }
    Scalar operator()(int c, int h, int w) const { return d_->value[flat3(c, h, w)]; }
    Scalar& operator()(int o, int i, int h, int w) { return d_->value[flat4(o, i, h, w)]; }
    Scalar operator()(int o, int i, int h, int w) const { return d_->value[flat4(o, i, h, w)]; }

    Scalar item() const {
        if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
        return d_->value[0];
    }

    bool all_finite() const { return d_->value.isFinite().all(); }

    // Deep copy of values and shape; grad buffer is not copied.
    TensorT clone() const {
        TensorT t(d_->shape, d_->requires_grad);
        t.value() = d_->value;
        return t;
    }

    bool same_storage(const TensorT& other) const { return d_ == other.d_; }

private:
    struct Data {
        Shape shape;
        Array value;
        Array grad;  // empty until first use
        bool requires_grad = false;
    };

    Eigen::Index flat1(int i0) const { return i0; }
    Eigen::Index flat2(int r, int c) const {
        return static_cast<Eigen::Index>(r) * d_->shape[1] + c;
    }
    Eigen::Index flat3(int c, int h, int w) const {
        const Shape& s = d_->shape;
        return (static_cast<Eigen::Index>(c) * s[1] + h) * s[2] + w;
    }
    Eigen::Index flat4(int o, int i, int h, int w) const {
        const Shape& s = d_->shape;
        return ((static_cast<Eigen::Index>(o) * s[1] + i) * s[2] + h) * s[3] + w;
    }

    std::shared_ptr<Data> d_;
};

using Tensor = TensorT<double>;

}  // namespace sfcn
