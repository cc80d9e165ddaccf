#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sbk/graph.hpp"
#include "sbk/rng.hpp"
#include "sbk/tensor.hpp"

namespace sbk::testutil {

// Builds a scalar loss from graph leaves created out of `inputs`. The same
// builder is reused to evaluate perturbed copies for finite differencing.
using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    bool ok = false;
};

inline double scaled_max_err(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 1e-8, err = 0.0;
    for (double v : a) scale = std::max(scale, std::fabs(v));
    for (double v : b) scale = std::max(scale, std::fabs(v));
    for (size_t i = 0; i < a.size(); ++i) err = std::max(err, std::fabs(a[i] - b[i]));
    return err / scale;
}

// Central finite differences (h defaults to the spec'd 1e-5) against
// reverse-mode gradients for every element of every input.
inline GradCheckResult grad_check(const LossBuilder& f, std::vector<Tensor> inputs,
                                  double tol, double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& xs) {
        Graph g;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const auto& x : xs) vars.push_back(g.leaf(x, true));
        Var loss = f(g, vars);
        return g.value(loss).data[0];
    };

    Graph g;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(g.leaf(x, true));
    Var loss = f(g, vars);
    g.backward(loss);

    GradCheckResult res;
    for (size_t t = 0; t < inputs.size(); ++t) {
        const auto& ad = g.grad(vars[t]);
        std::vector<double> fd(ad.size());
        for (size_t i = 0; i < fd.size(); ++i) {
            const double orig = inputs[t].data[i];
            inputs[t].data[i] = orig + h;
            const double fp = eval(inputs);
            inputs[t].data[i] = orig - h;
            const double fm = eval(inputs);
            inputs[t].data[i] = orig;
            fd[i] = (fp - fm) / (2.0 * h);
        }
        res.max_rel_err = std::max(res.max_rel_err, scaled_max_err(ad, fd));
    }
    res.ok = res.max_rel_err < tol;
    return res;
}

// Random projection tensor for scalarizing an op output.
inline Tensor random_projection(const Shape& s, RandomState& rng) {
    return Tensor::rand_uniform(s, rng, -1.0, 1.0);
}

} // namespace sbk::testutil
