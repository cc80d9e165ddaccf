#pragma once

#include <map>
#include <string>
#include <vector>

#include "sbk/graph.hpp"
#include "sbk/rng.hpp"
#include "sbk/tensor.hpp"

namespace sbk {

// Named parameter tensors in a stable insertion order. The order is what
// makes initialization, checkpoints, and optimizer state deterministic.
class ParamStore {
public:
    void add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }

private:
    std::vector<std::string> order_;
    std::map<std::string, Tensor> values_;
};

// One graph leaf per parameter; keeps the Var handles so gradients can be
// read back by name after backward().
struct BoundParams {
    Graph* g = nullptr;
    std::map<std::string, Var> vars;

    Var operator()(const std::string& name) const;
    const std::vector<double>& grad(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ParamStore& ps, bool requires_grad);

// Initializes by name suffix: ".w" / ".wq" / ... (any weight matrix) gets
// truncated-normal std 0.02 (resampled outside [-2, 2]), biases get zeros,
// layer-norm gains ones. Deterministic per seed and insertion order.
void init_params(ParamStore& ps, uint64_t seed);

} // namespace sbk
