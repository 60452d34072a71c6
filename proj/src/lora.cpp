#include "pf/lora.hpp"

#include <algorithm>

#include "pf/checkpoint.hpp"
#include "pf/error.hpp"
#include "pf/ops.hpp"

namespace pf {

const LoRAAdapter* LoRASet::find(const std::string& path) const {
    auto it = std::lower_bound(
        adapters.begin(), adapters.end(), path,
        [](const LoRAAdapter& a, const std::string& p) { return a.target_path < p; });
    if (it != adapters.end() && it->target_path == path) return &*it;
    return nullptr;
}

std::size_t LoRASet::trainable_count() const {
    std::size_t n = 0;
    for (const auto& ad : adapters) n += ad.a.size() + ad.b.size();
    return n;
}

void LoRASet::zero_grads() {
    for (auto& ad : adapters) {
        ad.a.zero_grad();
        ad.b.zero_grad();
    }
}

bool glob_match(const std::string& pattern, const std::string& text) {
    // iterative '*' matcher
    std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

LoRASet attach(ModelParams& params, int rank, const std::string& target_pattern,
               std::uint64_t seed) {
    if (rank < 1) throw ConfigError("attach: rank must be >= 1");

    std::vector<std::string> targets;
    for (const auto& [path, t] : params.tensors) {
        if (!glob_match(target_pattern, path)) continue;
        if (t.ndim() != 2)
            throw ConfigError("attach: target " + path + " is not a 2-D weight: " +
                              shape_str(t.shape()));
        targets.push_back(path);
    }
    if (targets.empty())
        throw ConfigError("attach: pattern '" + target_pattern + "' matches no parameters");

    // the whole base freezes; only adapter factors (and whatever the trainer
    // adds) carry gradients
    params.set_requires_grad(false);

    Rng rng(seed);
    LoRASet set;
    set.base = &params;
    for (const auto& path : targets) {  // map order = sorted path order
        const Tensor& w = params.at(path);
        const int d = w.dim(0), h = w.dim(1);
        if (rank > std::min(d, h))
            throw ConfigError("attach: rank " + std::to_string(rank) + " exceeds min dim of " +
                              path + " " + shape_str(w.shape()));
        LoRAAdapter ad;
        ad.target_path = path;
        ad.rank = rank;
        ad.a = Tensor::zeros({rank, h}, true);
        const float std_dev = 1.0f / static_cast<float>(rank);
        for (float& v : ad.a.mutable_data()) v = static_cast<float>(rng.normal()) * std_dev;
        ad.b = Tensor::zeros({d, rank}, true);  // zero: fresh set is a no-op
        set.adapters.push_back(std::move(ad));
    }
    return set;
}

Tensor effective_forward(const LoRAAdapter& adapter, const Tensor& w, const Tensor& x) {
    if (adapter.b.dim(0) != w.dim(0) || adapter.a.dim(1) != w.dim(1))
        throw DimensionError("effective_forward: adapter " + shape_str(adapter.b.shape()) + "x" +
                             shape_str(adapter.a.shape()) + " does not fit weight " +
                             shape_str(w.shape()));
    Tensor base = matmul_nt(x, w);
    Tensor update = matmul_nt(matmul_nt(x, adapter.a), adapter.b);
    return add(base, update);
}

ModelParams merge(const LoRASet& set) {
    if (set.base == nullptr) throw ContractError("merge: adapter set has no base");
    ModelParams out = set.base->clone_detached();
    for (const auto& ad : set.adapters) {
        Tensor& w = out.at(ad.target_path);
        NoGradGuard ng;
        Tensor delta = matmul(ad.b, ad.a);  // [d x k][k x h]
        for (std::size_t i = 0; i < w.size(); ++i)
            w.mutable_data()[i] += delta.data()[i];
    }
    return out;
}

void save_adapter(const LoRASet& set, const std::string& path) {
    std::map<std::string, Tensor> tensors;
    for (const auto& ad : set.adapters) {
        tensors.emplace("lora." + ad.target_path + ".A", ad.a);
        tensors.emplace("lora." + ad.target_path + ".B", ad.b);
    }
    CheckpointMeta meta;
    meta.adapter_only = true;
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& ad : set.adapters) {
        nlohmann::json e;
        e["target"] = ad.target_path;
        e["rank"] = ad.rank;
        targets.push_back(std::move(e));
    }
    meta.config["lora_targets"] = std::move(targets);
    save_checkpoint(tensors, meta, path);
}

LoRASet load_adapter(const std::string& path, const ModelParams& params) {
    auto [tensors, meta] = load_checkpoint(path);
    if (!meta.adapter_only)
        throw CompatibilityError("load_adapter: " + path + " is not an adapter checkpoint");
    if (!meta.config.contains("lora_targets"))
        throw IntegrityError("load_adapter: missing lora_targets in header");

    LoRASet set;
    set.base = &params;
    for (const auto& e : meta.config["lora_targets"]) {
        LoRAAdapter ad;
        ad.target_path = e.at("target").get<std::string>();
        ad.rank = e.at("rank").get<int>();
        if (!params.has(ad.target_path))
            throw CompatibilityError("load_adapter: base model has no parameter " +
                                     ad.target_path);
        const Tensor& w = params.at(ad.target_path);
        auto ia = tensors.find("lora." + ad.target_path + ".A");
        auto ib = tensors.find("lora." + ad.target_path + ".B");
        if (ia == tensors.end() || ib == tensors.end())
            throw IntegrityError("load_adapter: missing factors for " + ad.target_path);
        ad.a = ia->second;
        ad.b = ib->second;
        if (ad.a.ndim() != 2 || ad.b.ndim() != 2 || ad.b.dim(0) != w.dim(0) ||
            ad.a.dim(1) != w.dim(1) || ad.a.dim(0) != ad.rank || ad.b.dim(1) != ad.rank)
            throw CompatibilityError("load_adapter: factor shapes for " + ad.target_path +
                                     " do not fit weight " + shape_str(w.shape()));
        ad.a.set_requires_grad(true);
        ad.b.set_requires_grad(true);
        set.adapters.push_back(std::move(ad));
    }
    std::sort(set.adapters.begin(), set.adapters.end(),
              [](const LoRAAdapter& x, const LoRAAdapter& y) {
                  return x.target_path < y.target_path;
              });
    return set;
}

}  // namespace pf
