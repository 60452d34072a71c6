#include "pf/unet.hpp"

#include <cmath>
#include <vector>

#include "pf/error.hpp"
#include "pf/lora.hpp"
#include "pf/ops.hpp"

namespace pf {

Tensor& ModelParams::at(const std::string& path) {
    auto it = tensors.find(path);
    if (it == tensors.end()) throw CompatibilityError("unknown parameter path: " + path);
    return it->second;
}

const Tensor& ModelParams::at(const std::string& path) const {
    auto it = tensors.find(path);
    if (it == tensors.end()) throw CompatibilityError("unknown parameter path: " + path);
    return it->second;
}

std::size_t ModelParams::total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

void ModelParams::set_requires_grad(bool rg) {
    for (auto& [name, t] : tensors) t.set_requires_grad(rg);
}

void ModelParams::zero_grads() {
    for (auto& [name, t] : tensors) t.zero_grad();
}

ModelParams ModelParams::clone_detached() const {
    ModelParams out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.detach());
    return out;
}

Tensor time_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw ConfigError("time_embedding: dim must be positive and even, got " +
                          std::to_string(dim));
    if (t < 0) throw IndexError("time_embedding: negative timestep");
    Tensor out = Tensor::zeros({dim});
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
        const double arg = static_cast<double>(t) * freq;
        out.mutable_data()[static_cast<std::size_t>(2 * i)] = static_cast<float>(std::sin(arg));
        out.mutable_data()[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(std::cos(arg));
    }
    return out;
}

namespace {

float trunc_normal(Rng& rng, float std_dev) {
    // resample outside two standard deviations
    for (;;) {
        const double v = rng.normal();
        if (std::fabs(v) <= 2.0) return static_cast<float>(v) * std_dev;
    }
}

Tensor init_weight(std::vector<int> shape, Rng& rng, float std_dev = 0.02f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.mutable_data()) v = trunc_normal(rng, std_dev);
    return t;
}

void add_resblock(ModelParams& p, const std::string& prefix, int cin, int cout, int time_dim,
                  Rng& rng) {
    p.tensors.emplace(prefix + ".gn1.gamma", Tensor::full({cin}, 1.0f));
    p.tensors.emplace(prefix + ".gn1.beta", Tensor::zeros({cin}));
    p.tensors.emplace(prefix + ".conv1.weight", init_weight({cout, cin, 3, 3}, rng));
    p.tensors.emplace(prefix + ".conv1.bias", Tensor::zeros({cout}));
    p.tensors.emplace(prefix + ".temb.weight", init_weight({cout, time_dim}, rng));
    p.tensors.emplace(prefix + ".temb.bias", Tensor::zeros({cout}));
    p.tensors.emplace(prefix + ".gn2.gamma", Tensor::full({cout}, 1.0f));
    p.tensors.emplace(prefix + ".gn2.beta", Tensor::zeros({cout}));
    p.tensors.emplace(prefix + ".conv2.weight", init_weight({cout, cout, 3, 3}, rng));
    p.tensors.emplace(prefix + ".conv2.bias", Tensor::zeros({cout}));
    if (cin != cout)
        p.tensors.emplace(prefix + ".skip.weight", init_weight({cout, cin, 1, 1}, rng));
}

void add_attnblock(ModelParams& p, const std::string& prefix, int ch, int cond_dim, Rng& rng) {
    p.tensors.emplace(prefix + ".gn1.gamma", Tensor::full({ch}, 1.0f));
    p.tensors.emplace(prefix + ".gn1.beta", Tensor::zeros({ch}));
    p.tensors.emplace(prefix + ".self.q.weight", init_weight({ch, ch}, rng));
    p.tensors.emplace(prefix + ".self.k.weight", init_weight({ch, ch}, rng));
    p.tensors.emplace(prefix + ".self.v.weight", init_weight({ch, ch}, rng));
    p.tensors.emplace(prefix + ".self.out.weight", init_weight({ch, ch}, rng));
    p.tensors.emplace(prefix + ".gn2.gamma", Tensor::full({ch}, 1.0f));
    p.tensors.emplace(prefix + ".gn2.beta", Tensor::zeros({ch}));
    p.tensors.emplace(prefix + ".cross.q.weight", init_weight({ch, ch}, rng));
    p.tensors.emplace(prefix + ".cross.k.weight", init_weight({ch, cond_dim}, rng));
    p.tensors.emplace(prefix + ".cross.v.weight", init_weight({ch, cond_dim}, rng));
    p.tensors.emplace(prefix + ".cross.out.weight", init_weight({ch, ch}, rng));
}

void validate_config(const UNetConfig& cfg) {
    if (cfg.depth < 1 || cfg.base_channels < 1 || cfg.in_channels < 1)
        throw ConfigError("unet: bad depth/channels");
    if (cfg.time_embed_dim % 2 != 0) throw ConfigError("unet: time_embed_dim must be even");
    if (cfg.groups < 1 || cfg.base_channels % cfg.groups != 0)
        throw ConfigError("unet: base_channels must be divisible by groups");
    for (int s : cfg.attn_stages) {
        if (s < 0 || s > cfg.depth)
            throw ConfigError("unet: attn stage " + std::to_string(s) + " outside [0, depth]");
    }
}

// Shared by init and forward so the parameter map and the wiring cannot
// drift apart.
struct Wiring {
    struct Stage {
        std::string res;
        std::string attn;  // empty when the stage has no attention
        int cin = 0, cout = 0;
    };
    std::vector<Stage> down;
    Stage mid1, mid2;
    std::string mid_attn;
    std::vector<Stage> up;
};

Wiring make_wiring(const UNetConfig& cfg) {
    Wiring w;
    int prev = cfg.base_channels;  // stem output
    for (int i = 0; i < cfg.depth; ++i) {
        Wiring::Stage s;
        s.res = "unet.d" + std::to_string(i) + ".res";
        s.cin = prev;
        s.cout = cfg.channels_at(i);
        if (cfg.attn_stages.count(i)) s.attn = "unet.d" + std::to_string(i) + ".attn";
        prev = s.cout;
        w.down.push_back(s);
    }
    const int mid_ch = cfg.channels_at(cfg.depth - 1);
    w.mid1 = {"unet.mid.res1", "", mid_ch, mid_ch};
    w.mid2 = {"unet.mid.res2", "", mid_ch, mid_ch};
    if (cfg.attn_stages.count(cfg.depth)) w.mid_attn = "unet.mid.attn";
    prev = mid_ch;
    for (int i = cfg.depth - 1; i >= 0; --i) {
        Wiring::Stage s;
        s.res = "unet.u" + std::to_string(i) + ".res";
        s.cin = prev + cfg.channels_at(i);  // upsampled features + skip
        s.cout = cfg.channels_at(i);
        prev = s.cout;
        w.up.push_back(s);
    }
    return w;
}

}  // namespace

ModelParams init_unet(const UNetConfig& cfg, Rng& rng) {
    validate_config(cfg);
    const Wiring w = make_wiring(cfg);
    ModelParams p;

    p.tensors.emplace("unet.time.fc1.weight",
                      init_weight({cfg.time_embed_dim, cfg.time_embed_dim}, rng));
    p.tensors.emplace("unet.time.fc1.bias", Tensor::zeros({cfg.time_embed_dim}));
    p.tensors.emplace("unet.time.fc2.weight",
                      init_weight({cfg.time_embed_dim, cfg.time_embed_dim}, rng));
    p.tensors.emplace("unet.time.fc2.bias", Tensor::zeros({cfg.time_embed_dim}));

    p.tensors.emplace("unet.stem.weight",
                      init_weight({cfg.base_channels, cfg.in_channels, 3, 3}, rng));
    p.tensors.emplace("unet.stem.bias", Tensor::zeros({cfg.base_channels}));

    for (const auto& s : w.down) {
        add_resblock(p, s.res, s.cin, s.cout, cfg.time_embed_dim, rng);
        if (!s.attn.empty()) add_attnblock(p, s.attn, s.cout, cfg.cond_dim, rng);
    }
    add_resblock(p, w.mid1.res, w.mid1.cin, w.mid1.cout, cfg.time_embed_dim, rng);
    if (!w.mid_attn.empty()) add_attnblock(p, w.mid_attn, w.mid1.cout, cfg.cond_dim, rng);
    add_resblock(p, w.mid2.res, w.mid2.cin, w.mid2.cout, cfg.time_embed_dim, rng);
    for (const auto& s : w.up) add_resblock(p, s.res, s.cin, s.cout, cfg.time_embed_dim, rng);

    p.tensors.emplace("unet.out.gn.gamma", Tensor::full({cfg.base_channels}, 1.0f));
    p.tensors.emplace("unet.out.gn.beta", Tensor::zeros({cfg.base_channels}));
    // zero so the fresh model predicts zero noise; stabilizes early steps
    p.tensors.emplace("unet.out.conv.weight",
                      Tensor::zeros({cfg.in_channels, cfg.base_channels, 3, 3}));
    p.tensors.emplace("unet.out.conv.bias", Tensor::zeros({cfg.in_channels}));
    // time-gated linear bypass of x_t: group norms strip global means, so
    // this is the only path that can carry the mean component of eps (the
    // c_skip idea from preconditioned diffusion parameterizations)
    p.tensors.emplace("unet.out.gate.weight", Tensor::zeros({1, cfg.time_embed_dim}));
    p.tensors.emplace("unet.out.gate.bias", Tensor::zeros({1}));
    return p;
}

namespace {

Tensor lora_proj(const Tensor& x, const std::string& path, const ModelParams& p,
                 const LoRASet* lora) {
    const Tensor& w = p.at(path);
    Tensor y = matmul_nt(x, w);
    if (lora != nullptr) {
        if (const LoRAAdapter* ad = lora->find(path)) {
            y = add(y, matmul_nt(matmul_nt(x, ad->a), ad->b));
        }
    }
    return y;
}

Tensor resblock_forward(const ModelParams& p, const std::string& prefix, const Tensor& h,
                        const Tensor& temb, int groups) {
    Tensor r = group_norm(h, groups, p.at(prefix + ".gn1.gamma"), p.at(prefix + ".gn1.beta"));
    r = silu(r);
    r = conv2d(r, p.at(prefix + ".conv1.weight"), p.at(prefix + ".conv1.bias"), 1, 1);
    Tensor tproj = linear(temb, p.at(prefix + ".temb.weight"), p.at(prefix + ".temb.bias"));
    r = add_channel_bias(r, reshape(tproj, {r.dim(0)}));
    r = group_norm(r, groups, p.at(prefix + ".gn2.gamma"), p.at(prefix + ".gn2.beta"));
    r = silu(r);
    r = conv2d(r, p.at(prefix + ".conv2.weight"), p.at(prefix + ".conv2.bias"), 1, 1);
    Tensor skip = p.has(prefix + ".skip.weight")
                      ? conv2d(h, p.at(prefix + ".skip.weight"), Tensor(), 1, 0)
                      : h;
    return add(r, skip);
}

Tensor attnblock_forward(const ModelParams& p, const std::string& prefix, const Tensor& h,
                         const Tensor& cond, int groups, const LoRASet* lora) {
    const int height = h.dim(1), width = h.dim(2);
    // self-attention over spatial positions
    Tensor n1 = group_norm(h, groups, p.at(prefix + ".gn1.gamma"), p.at(prefix + ".gn1.beta"));
    Tensor rows = chw_to_rows(n1);
    Tensor a = attention(lora_proj(rows, prefix + ".self.q.weight", p, lora),
                         lora_proj(rows, prefix + ".self.k.weight", p, lora),
                         lora_proj(rows, prefix + ".self.v.weight", p, lora));
    a = lora_proj(a, prefix + ".self.out.weight", p, lora);
    Tensor mid = add(h, rows_to_chw(a, height, width));

    // cross-attention: queries from features, keys/values from the encoded
    // conditioning sequence
    Tensor n2 = group_norm(mid, groups, p.at(prefix + ".gn2.gamma"), p.at(prefix + ".gn2.beta"));
    Tensor rows2 = chw_to_rows(n2);
    Tensor c = attention(lora_proj(rows2, prefix + ".cross.q.weight", p, lora),
                         lora_proj(cond, prefix + ".cross.k.weight", p, lora),
                         lora_proj(cond, prefix + ".cross.v.weight", p, lora));
    c = lora_proj(c, prefix + ".cross.out.weight", p, lora);
    return add(mid, rows_to_chw(c, height, width));
}

}  // namespace

Tensor unet_forward(const ModelParams& params, const UNetConfig& cfg, const Tensor& x_t, int t,
                    const Tensor& cond, const LoRASet* lora) {
    validate_config(cfg);
    if (x_t.ndim() != 3 || x_t.dim(0) != cfg.in_channels)
        throw DimensionError("unet_forward: input " + shape_str(x_t.shape()) + " but expecting " +
                             std::to_string(cfg.in_channels) + " channels");
    const int divisor = 1 << cfg.depth;
    if (x_t.dim(1) % divisor != 0 || x_t.dim(2) % divisor != 0)
        throw ConfigError("unet_forward: spatial dims " + shape_str(x_t.shape()) +
                          " not divisible by 2^depth = " + std::to_string(divisor));
    const bool needs_cond = !cfg.attn_stages.empty();
    if (needs_cond && (!cond.defined() || cond.ndim() != 2 || cond.dim(1) != cfg.cond_dim))
        throw DimensionError("unet_forward: conditioning must be L x cond_dim");

    const Wiring w = make_wiring(cfg);

    Tensor temb = reshape(time_embedding(t, cfg.time_embed_dim), {1, cfg.time_embed_dim});
    temb = linear(temb, params.at("unet.time.fc1.weight"), params.at("unet.time.fc1.bias"));
    temb = silu(temb);
    temb = linear(temb, params.at("unet.time.fc2.weight"), params.at("unet.time.fc2.bias"));

    Tensor h = conv2d(x_t, params.at("unet.stem.weight"), params.at("unet.stem.bias"), 1, 1);

    std::vector<Tensor> skips;
    for (const auto& s : w.down) {
        h = resblock_forward(params, s.res, h, temb, cfg.groups);
        if (!s.attn.empty()) h = attnblock_forward(params, s.attn, h, cond, cfg.groups, lora);
        skips.push_back(h);
        h = avgpool2(h);
    }

    h = resblock_forward(params, w.mid1.res, h, temb, cfg.groups);
    if (!w.mid_attn.empty()) h = attnblock_forward(params, w.mid_attn, h, cond, cfg.groups, lora);
    h = resblock_forward(params, w.mid2.res, h, temb, cfg.groups);

    for (std::size_t u = 0; u < w.up.size(); ++u) {
        const auto& s = w.up[u];
        h = upsample_nearest2(h);
        h = concat_channels(h, skips[skips.size() - 1 - u]);
        h = resblock_forward(params, s.res, h, temb, cfg.groups);
    }

    h = group_norm(h, cfg.groups, params.at("unet.out.gn.gamma"), params.at("unet.out.gn.beta"));
    h = silu(h);
    h = conv2d(h, params.at("unet.out.conv.weight"), params.at("unet.out.conv.bias"), 1, 1);
    Tensor gate = linear(temb, params.at("unet.out.gate.weight"), params.at("unet.out.gate.bias"));
    return add(h, scale_scalar(x_t, reshape(gate, {1})));
}

}  // namespace pf
