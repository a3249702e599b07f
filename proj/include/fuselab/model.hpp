#pragma once

// U2Net: a spatial U-Net and a spectral U-Net joined by S2Blocks. Feature
// maps run through three scales (S, 2S, 4S wide) across five stages; the
// spatial branch uses ResBlocks, the spectral branch fuses the two feature
// streams with an S2Block followed by an MLP at every stage, and the head
// reconstructs a residual on top of the upsampled low-res input.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuselab/conv.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/tensor.hpp"

namespace fuselab {

enum class Variant { Full, V1, V2, V3, V4 };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::V1: return "v1";
        case Variant::V2: return "v2";
        case Variant::V3: return "v3";
        case Variant::V4: return "v4";
    }
    return "full";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "v1") return Variant::V1;
    if (s == "v2") return Variant::V2;
    if (s == "v3") return Variant::V3;
    if (s == "v4") return Variant::V4;
    throw ConfigError("unknown variant: " + s);
}

struct ModelConfig {
    std::int64_t c = 1;        // channels of A (1 pansharpening, 3 HISR)
    std::int64_t C = 8;        // spectral bands of B
    std::int64_t S = 32;       // base feature width
    std::int64_t Sprime = 16;  // head width S'
    Variant variant = Variant::Full;
    double lrelu_slope = 0.2;
    int resblocks_per_stage = 1;
    std::int64_t dw_kernel = 3;  // depthwise widening kernel extent (3 or 1)
    std::uint64_t seed = 0;
    bool zero_head_init = false;  // test mode: zero head conv => O == B^U

    void validate() const {
        if (c < 1 || C < 1 || S < 1 || Sprime < 1)
            throw ConfigError("model config: extents must be positive");
        if (S % Sprime != 0)
            throw ConfigError("model config: S=" + std::to_string(S) +
                              " not divisible by S'=" + std::to_string(Sprime));
        if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0))
            throw ConfigError("model config: lrelu_slope must lie in (0,1)");
        if (resblocks_per_stage < 1)
            throw ConfigError("model config: resblocks_per_stage must be >= 1");
        if (dw_kernel != 1 && dw_kernel != 3)
            throw ConfigError("model config: dw_kernel must be 1 or 3");
    }

    // stage widths S, 2S, 4S, 2S, S for stages 1..5
    std::int64_t stage_width(int stage) const {
        static constexpr int mult[5] = {1, 2, 4, 2, 1};
        return S * mult[stage - 1];
    }

    nlohmann::json to_json() const {
        return {{"c", c},
                {"C", C},
                {"S", S},
                {"Sprime", Sprime},
                {"variant", variant_name(variant)},
                {"lrelu_slope", lrelu_slope},
                {"resblocks_per_stage", resblocks_per_stage},
                {"dw_kernel", dw_kernel},
                {"seed", seed},
                {"zero_head_init", zero_head_init}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig m;
        static const std::vector<std::string> known{"c",           "C",
                                                   "S",           "Sprime",
                                                   "variant",     "lrelu_slope",
                                                   "resblocks_per_stage", "dw_kernel",
                                                   "seed",        "zero_head_init"};
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find(known.begin(), known.end(), it.key()) == known.end())
                throw ConfigError("model config: unknown key '" + it.key() + "'");
        m.c = j.value("c", m.c);
        m.C = j.value("C", m.C);
        m.S = j.value("S", m.S);
        m.Sprime = j.value("Sprime", m.Sprime);
        if (j.contains("variant")) m.variant = variant_from_name(j["variant"]);
        m.lrelu_slope = j.value("lrelu_slope", m.lrelu_slope);
        m.resblocks_per_stage = j.value("resblocks_per_stage", m.resblocks_per_stage);
        m.dw_kernel = j.value("dw_kernel", m.dw_kernel);
        m.seed = j.value("seed", m.seed);
        m.zero_head_init = j.value("zero_head_init", m.zero_head_init);
        m.validate();
        return m;
    }
};

// Named parameter leaves in fixed registration order.
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ContractError("duplicate parameter: " + name);
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }
    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return items_[it->second].second;
    }
    const Tensor<T>& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    auto& items() { return items_; }
    const auto& items() const { return items_; }
    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& [_, t] : items_) n += t.size();
        return n;
    }
    void zero_grads() {
        for (auto& [_, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// attention primitives on head-batched tensors
// ---------------------------------------------------------------------------
// The head axis comes last in the public contract: Ta, Tb, Tc, Td are
// (HW, S', N). Internally heads are batched first ((N, HW, S')) so each
// head is one contiguous GEMM.

namespace detail {

template <typename T>
Tensor<T> heads_first(const Tensor<T>& t) {  // (HW,S',N) -> (N,HW,S')
    return permute(t, {2, 0, 1});
}

template <typename T>
Tensor<T> heads_last(const Tensor<T>& t) {  // (N,R,C) -> (R,C,N)
    return permute(t, {1, 2, 0});
}

// Cspa (heads first): softmax_rows(Ta Tb^T / sqrt(S'))
template <typename T>
Tensor<T> cspa_hf(const Tensor<T>& ta, const Tensor<T>& tb) {
    const auto sp = static_cast<double>(ta.dim(2));
    return softmax_rows(scale(bmm(ta, tb, false, true), T(1.0 / std::sqrt(sp))));
}

// Cspe (heads first): softmax_rows(Tc^T Td / (sqrt(S'^3)/HW)); the divisor
// scales with HW, so it differs per stage.
template <typename T>
Tensor<T> cspe_hf(const Tensor<T>& tc, const Tensor<T>& td) {
    const auto sp = static_cast<double>(tc.dim(2));
    const auto hw = static_cast<double>(tc.dim(1));
    return softmax_rows(scale(bmm(tc, td, true, false), T(hw / std::sqrt(sp * sp * sp))));
}

}  // namespace detail

// Spec-shaped wrappers, inputs (HW, S', N), outputs with the head axis last.
template <typename T>
Tensor<T> spatial_self_correlation(const Tensor<T>& ta, const Tensor<T>& tb) {
    check_same_shape(ta, tb, "spatial_self_correlation");
    return detail::heads_last(detail::cspa_hf(detail::heads_first(ta), detail::heads_first(tb)));
}

template <typename T>
Tensor<T> spectral_self_correlation(const Tensor<T>& tc, const Tensor<T>& td) {
    check_same_shape(tc, td, "spectral_self_correlation");
    return detail::heads_last(detail::cspe_hf(detail::heads_first(tc), detail::heads_first(td)));
}

// Tfus(.,.,i) = (Cspa_i Tc_i) ⊙ (Tb_i Cspe_i)
template <typename T>
Tensor<T> ssio_fuse(const Tensor<T>& cspa, const Tensor<T>& cspe, const Tensor<T>& tb,
                    const Tensor<T>& tc) {
    auto ca = detail::heads_first(cspa);
    auto ce = detail::heads_first(cspe);
    auto b = detail::heads_first(tb);
    auto c = detail::heads_first(tc);
    return detail::heads_last(mul(bmm(ca, c), bmm(b, ce)));
}

// ---------------------------------------------------------------------------
// U2Net
// ---------------------------------------------------------------------------

template <typename T>
class U2Net {
public:
    explicit U2Net(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Exact scalar parameter count; independent of the seed by construction.
    static std::int64_t param_count(const ModelConfig& cfg) {
        U2Net<T> probe(cfg);
        return probe.params_.total_count();
    }

    // A: (B, H, W, c); BU: (B, H, W, C) already upsampled to A's grid.
    Tensor<T> forward(const Tensor<T>& a, const Tensor<T>& bu) const {
        if (a.rank() != 4 || bu.rank() != 4)
            throw ShapeError("u2net: inputs must be BxHxWxC");
        const std::int64_t h = a.dim(1), w = a.dim(2);
        if (h % 4 != 0 || w % 4 != 0)
            throw ConfigError("u2net: H and W must be divisible by 4, got " +
                              shape_str(a.shape()));
        if (a.dim(3) != cfg_.c)
            throw ShapeError("u2net: A has " + std::to_string(a.dim(3)) +
                             " channels, config expects " + std::to_string(cfg_.c));
        if (bu.dim(3) != cfg_.C)
            throw ShapeError("u2net: B^U has " + std::to_string(bu.dim(3)) +
                             " channels, config expects " + std::to_string(cfg_.C));
        if (bu.dim(0) != a.dim(0) || bu.dim(1) != h || bu.dim(2) != w)
            throw ShapeError("u2net: A " + shape_str(a.shape()) + " and B^U " +
                             shape_str(bu.shape()) + " disagree");

        std::vector<Tensor<T>> spatial_feats;
        if (cfg_.variant == Variant::V1) {
            // single shared branch: both S2Block operands come from it
            spatial_feats.assign(5, Tensor<T>());
        } else {
            spatial_feats = spatial_branch(a);
        }

        Tensor<T> x = cfg_.variant == Variant::V1 ? concat_last(a, bu) : bu;
        Tensor<T> q = conv3(x, cfg_.variant == Variant::V1 ? "shared.lift" : "spectral.lift");

        auto fuse_stage = [&](const Tensor<T>& feat, int stage) {
            const Tensor<T>& spa =
                cfg_.variant == Variant::V1 ? feat : spatial_feats[stage - 1];
            return mlp(fuse(spa, feat, stage), stage);
        };

        Tensor<T> f1 = fuse_stage(q, 1);
        Tensor<T> f2 = fuse_stage(encode_step(f1, spec_branch(), 1), 2);
        Tensor<T> f3 = fuse_stage(encode_step(f2, spec_branch(), 2), 3);
        Tensor<T> f4 = fuse_stage(add(decode_step(f3, spec_branch(), 3), f2), 4);
        Tensor<T> f5 = fuse_stage(add(decode_step(f4, spec_branch(), 4), f1), 5);
        return add(conv3(f5, "head"), bu);
    }

    // Fused stage input for tests: S2Block (or its variant replacement).
    Tensor<T> s2block_forward(const Tensor<T>& fspa, const Tensor<T>& fspe, int stage) const {
        return fuse(fspa, fspe, stage);
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;

    std::string spec_branch() const {
        return cfg_.variant == Variant::V1 ? "shared" : "spectral";
    }

    // ---- construction -----------------------------------------------------

    // Layers feeding a leaky ReLU use fan-in (Kaiming) scaling with the leaky
    // correction; activation-free maps use fan-in+fan-out (Glorot) scaling so
    // their variance gain is 1 — with the S2Block's multiplicative fusion any
    // per-layer gain above 1 compounds into divergent activations at init.
    enum class Gain { Leaky, Linear };

    void init_uniform(Tensor<T>& t, std::int64_t fan_in, std::int64_t fan_out, Gain gain, Rng& rng,
                      double scale = 1.0) {
        const double bound =
            scale * (gain == Gain::Leaky
                         ? std::sqrt(6.0 / ((1.0 + cfg_.lrelu_slope * cfg_.lrelu_slope) * fan_in))
                         : std::sqrt(6.0 / double(fan_in + fan_out)));
        for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }

    void add_conv(const std::string& name, std::int64_t kh, std::int64_t kw, std::int64_t cin,
                  std::int64_t cout, Rng& rng, bool zero = false, Gain gain = Gain::Linear,
                  double scale = 1.0) {
        auto& w = params_.add(name + ".w", Tensor<T>::zeros({kh, kw, cin, cout}, true));
        if (!zero) init_uniform(w, kh * kw * cin, kh * kw * cout, gain, rng, scale);
        params_.add(name + ".b", Tensor<T>::zeros({cout}, true));
    }

    void add_fc(const std::string& name, std::int64_t din, std::int64_t dout, Rng& rng,
                Gain gain = Gain::Linear, double scale = 1.0) {
        auto& w = params_.add(name + ".w", Tensor<T>::zeros({din, dout}, true));
        init_uniform(w, din, dout, gain, rng, scale);
        params_.add(name + ".b", Tensor<T>::zeros({dout}, true));
    }

    void add_steps(const std::string& branch, Rng& rng) {
        for (int step = 1; step <= 2; ++step) {
            const std::int64_t sk = cfg_.stage_width(step);
            const std::string base = branch + ".step" + std::to_string(step);
            add_conv(base + ".down", 2, 2, sk, sk, rng);
            auto& dw = params_.add(base + ".dw.w",
                                   Tensor<T>::zeros({cfg_.dw_kernel, cfg_.dw_kernel, sk, 2}, true));
            init_uniform(dw, cfg_.dw_kernel * cfg_.dw_kernel,
                         2 * cfg_.dw_kernel * cfg_.dw_kernel, Gain::Linear, rng);
            params_.add(base + ".dw.b", Tensor<T>::zeros({2 * sk}, true));
        }
        for (int step = 3; step <= 4; ++step) {
            const std::int64_t sk = cfg_.stage_width(step + 1);  // target width
            add_conv(branch + ".step" + std::to_string(step) + ".up", 2, 2, 2 * sk, sk, rng);
        }
    }

    void add_s2(int stage, Rng& rng) {
        const std::int64_t sk = cfg_.stage_width(stage);
        const std::string base = "spectral.stage" + std::to_string(stage);
        if (cfg_.variant == Variant::V2) {
            add_fc(base + ".cat", 2 * sk, sk, rng);
            return;
        }
        // Ta/Tb come from the spatial input, Tc/Td from the spectral one.
        // V3 drops Td (no Cspe); V4 drops Ta (no Cspa).
        if (cfg_.variant != Variant::V4) add_fc(base + ".s2.ta", sk, sk, rng);
        add_fc(base + ".s2.tb", sk, sk, rng);
        add_fc(base + ".s2.tc", sk, sk, rng);
        // The spectral-correlation divisor sqrt(S'^3)/HW amplifies the key
        // logits by HW/sqrt(S'^3) (~45x for 32x32 inputs); a plain Glorot key
        // map saturates the softmax at init and stalls learning through the
        // spectral path.  Damping the key weights keeps the logits O(1).
        if (cfg_.variant != Variant::V3)
            add_fc(base + ".s2.td", sk, sk, rng, Gain::Linear, 0.01);
        add_fc(base + ".s2.out", sk, sk, rng);
    }

    void build(Rng& rng) {
        if (cfg_.variant == Variant::V1) {
            add_conv("shared.lift", 3, 3, cfg_.c + cfg_.C, cfg_.S, rng);
        } else {
            add_conv("spatial.lift", 3, 3, cfg_.c, cfg_.S, rng);
            for (int stage = 1; stage <= 4; ++stage) {
                const std::int64_t sk = cfg_.stage_width(stage);
                for (int r = 1; r <= cfg_.resblocks_per_stage; ++r) {
                    const std::string base = "spatial.stage" + std::to_string(stage) +
                                             ".res" + std::to_string(r);
                    add_conv(base + ".conv1", 3, 3, sk, sk, rng, false, Gain::Leaky);
                    add_conv(base + ".conv2", 3, 3, sk, sk, rng);
                }
            }
            add_steps("spatial", rng);
            add_conv("spectral.lift", 3, 3, cfg_.C, cfg_.S, rng);
        }
        for (int stage = 1; stage <= 5; ++stage) {
            const std::int64_t sk = cfg_.stage_width(stage);
            add_s2(stage, rng);
            const std::string base =
                spec_branch() == "shared" ? "shared.stage" : "spectral.stage";
            add_fc(base + std::to_string(stage) + ".mlp.fc1", sk, sk, rng, Gain::Leaky);
            add_fc(base + std::to_string(stage) + ".mlp.fc2", sk, sk, rng);
        }
        add_steps(spec_branch(), rng);
        add_conv("head", 3, 3, cfg_.S, cfg_.C, rng, cfg_.zero_head_init);
    }

    // ---- forward helpers --------------------------------------------------

    Tensor<T> conv3(const Tensor<T>& x, const std::string& name) const {
        return conv2d(x, params_.get(name + ".w"), params_.get(name + ".b"), 1, 1);
    }

    Tensor<T> resblock(const Tensor<T>& x, const std::string& base) const {
        auto h = conv2d(x, params_.get(base + ".conv1.w"), params_.get(base + ".conv1.b"), 1, 1);
        h = lrelu(h, static_cast<T>(cfg_.lrelu_slope));
        h = conv2d(h, params_.get(base + ".conv2.w"), params_.get(base + ".conv2.b"), 1, 1);
        return add(x, h);
    }

    Tensor<T> stage_blocks(const Tensor<T>& x, int stage) const {
        Tensor<T> f = x;
        for (int r = 1; r <= cfg_.resblocks_per_stage; ++r)
            f = resblock(f, "spatial.stage" + std::to_string(stage) + ".res" + std::to_string(r));
        return f;
    }

    Tensor<T> mlp(const Tensor<T>& x, int stage) const {
        const std::string base = (spec_branch() == "shared" ? "shared.stage" : "spectral.stage") +
                                 std::to_string(stage) + ".mlp";
        auto h = fully_connected(x, params_.get(base + ".fc1.w"), params_.get(base + ".fc1.b"));
        h = lrelu(h, static_cast<T>(cfg_.lrelu_slope));
        h = fully_connected(h, params_.get(base + ".fc2.w"), params_.get(base + ".fc2.b"));
        return add(x, h);
    }

    Tensor<T> encode_step(const Tensor<T>& x, const std::string& branch, int step) const {
        const std::string base = branch + ".step" + std::to_string(step);
        auto d = conv2d(x, params_.get(base + ".down.w"), params_.get(base + ".down.b"), 2, 0);
        return conv2d_depthwise(d, params_.get(base + ".dw.w"), params_.get(base + ".dw.b"));
    }

    Tensor<T> decode_step(const Tensor<T>& x, const std::string& branch, int step) const {
        const std::string base = branch + ".step" + std::to_string(step);
        return conv2d_transposed(x, params_.get(base + ".up.w"), params_.get(base + ".up.b"));
    }

    std::vector<Tensor<T>> spatial_branch(const Tensor<T>& a) const {
        auto s1 = stage_blocks(conv3(a, "spatial.lift"), 1);
        auto s2 = stage_blocks(encode_step(s1, "spatial", 1), 2);
        auto s3 = stage_blocks(encode_step(s2, "spatial", 2), 3);
        auto s4 = stage_blocks(add(decode_step(s3, "spatial", 3), s2), 4);
        auto s5 = add(decode_step(s4, "spatial", 4), s1);  // stage 5: no ResBlock
        return {s1, s2, s3, s4, s5};
    }

    // (B,HW,Sk) -> (B*N, HW, S') with contiguous column blocks per head
    Tensor<T> split_heads(const Tensor<T>& m) const {
        const std::int64_t bsz = m.dim(0), hw = m.dim(1), sk = m.dim(2);
        const std::int64_t n = sk / cfg_.Sprime;
        auto t = reshape(m, {bsz, hw, n, cfg_.Sprime});
        t = permute(t, {0, 2, 1, 3});
        return reshape(t, {bsz * n, hw, cfg_.Sprime});
    }

    Tensor<T> merge_heads(const Tensor<T>& t, std::int64_t bsz) const {
        const std::int64_t n = t.dim(0) / bsz, hw = t.dim(1);
        auto m = reshape(t, {bsz, n, hw, cfg_.Sprime});
        m = permute(m, {0, 2, 1, 3});
        return reshape(m, {bsz, hw, n * cfg_.Sprime});
    }

    // S2Block (or the variant substitute) on (B,H,W,Sk) feature maps.
    Tensor<T> fuse(const Tensor<T>& fspa, const Tensor<T>& fspe, int stage) const {
        check_same_shape(fspa, fspe, "s2block");
        const std::int64_t bsz = fspa.dim(0), h = fspa.dim(1), w = fspa.dim(2),
                           sk = fspa.dim(3);
        if (sk % cfg_.Sprime != 0)
            throw ConfigError("s2block: stage width " + std::to_string(sk) +
                              " not divisible by S'=" + std::to_string(cfg_.Sprime));
        const std::string base = "spectral.stage" + std::to_string(stage);
        auto mspa = reshape(fspa, {bsz, h * w, sk});
        auto mspe = reshape(fspe, {bsz, h * w, sk});

        if (cfg_.variant == Variant::V2) {
            auto cat = concat_last(mspa, mspe);
            auto out = fully_connected(cat, params_.get(base + ".cat.w"),
                                       params_.get(base + ".cat.b"));
            return reshape(out, {bsz, h, w, sk});
        }

        auto proj = [&](const Tensor<T>& m, const char* which) {
            return split_heads(fully_connected(m, params_.get(base + ".s2." + which + ".w"),
                                               params_.get(base + ".s2." + which + ".b")));
        };

        Tensor<T> tfus;
        if (cfg_.variant == Variant::V3) {
            auto cspa = detail::cspa_hf(proj(mspa, "ta"), proj(mspa, "tb"));
            tfus = bmm(cspa, proj(mspe, "tc"));
        } else if (cfg_.variant == Variant::V4) {
            auto cspe = detail::cspe_hf(proj(mspe, "tc"), proj(mspe, "td"));
            tfus = bmm(proj(mspa, "tb"), cspe);
        } else {
            auto tb = proj(mspa, "tb");
            auto tc = proj(mspe, "tc");
            auto cspa = detail::cspa_hf(proj(mspa, "ta"), tb);
            auto cspe = detail::cspe_hf(tc, proj(mspe, "td"));
            tfus = mul(bmm(cspa, tc), bmm(tb, cspe));
        }
        auto mfus = merge_heads(tfus, bsz);
        auto out = fully_connected(mfus, params_.get(base + ".s2.out.w"),
                                   params_.get(base + ".s2.out.b"));
        return reshape(out, {bsz, h, w, sk});
    }
};

}  // namespace fuselab
