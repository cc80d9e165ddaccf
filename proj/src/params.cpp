#include "sbk/params.hpp"

#include "sbk/errors.hpp"

namespace sbk {

void ParamStore::add(const std::string& name, Tensor t) {
    if (values_.count(name)) throw ContractError("parameter already registered: " + name);
    order_.push_back(name);
    values_.emplace(name, std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return values_.count(name) != 0; }

Var BoundParams::operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ContractError("parameter not bound: " + name);
    return it->second;
}

const std::vector<double>& BoundParams::grad(const std::string& name) const {
    return g->grad((*this)(name));
}

BoundParams bind_params(Graph& g, const ParamStore& ps, bool requires_grad) {
    BoundParams bp;
    bp.g = &g;
    for (const auto& name : ps.names()) bp.vars.emplace(name, g.leaf(ps.at(name), requires_grad));
    return bp;
}

namespace {

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

double trunc_normal(RandomState& rng, double std) {
    // Resample outside +-2 (absolute), matching the usual ViT init.
    for (;;) {
        const double z = rng.next_gauss() * std;
        if (z >= -2.0 && z <= 2.0) return z;
    }
}

} // namespace

void init_params(ParamStore& ps, uint64_t seed) {
    auto root = RandomState::from_seed(seed);
    uint64_t idx = 0;
    for (const auto& name : ps.names()) {
        Tensor& t = ps.at(name);
        auto rng = root.split(idx++);
        if (ends_with(name, ".gamma")) {
            for (double& v : t.data) v = 1.0;
        } else if (ends_with(name, ".beta") || ends_with(name, ".b")) {
            for (double& v : t.data) v = 0.0;
        } else {
            for (double& v : t.data) v = trunc_normal(rng, 0.02);
        }
    }
}

} // namespace sbk
