#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sbk/errors.hpp"
#include "sbk/rng.hpp"

namespace sbk {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor of 64-bit floats. Plain value type; gradient
// bookkeeping lives in Graph, which stores an optional grad buffer per node.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d);
    Tensor(Shape s, double fill);

    size_t numel() const { return data.size(); }
    size_t ndim() const { return shape.size(); }
    size_t axis(size_t i) const { return shape.at(i); }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }

    bool all_finite() const;

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
    static Tensor randn(Shape s, RandomState& rng, double std = 1.0);
    static Tensor rand_uniform(Shape s, RandomState& rng, double lo = 0.0, double hi = 1.0);
};

// Throws NumericError naming `what` if any element is non-finite.
void check_finite(const Tensor& t, const std::string& what);
void check_finite(const std::vector<double>& v, const std::string& what);

} // namespace sbk
