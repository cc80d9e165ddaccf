#include "sbk/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sbk {

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::randn(Shape s, RandomState& rng, double std) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.next_gauss() * std;
    return t;
}

Tensor Tensor::rand_uniform(Shape s, RandomState& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = lo + (hi - lo) * rng.next_uniform();
    return t;
}

void check_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite())
        throw NumericError(what + " produced a non-finite value");
}

void check_finite(const std::vector<double>& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(what + " produced a non-finite value");
}

} // namespace sbk
