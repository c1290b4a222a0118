#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vxls/conv.hpp"
#include "vxls/mlstm.hpp"
#include "vxls/ops.hpp"
#include "vxls/rng.hpp"

// BiXLSTM-ResNet U-Net: two-channel (CT+PET) input, residual conv encoder
// with strided downsampling, bidirectional mLSTM blocks at a configurable
// placement, and a convolutional decoder with skip connections. The MAE
// variant shares the encoder parameter names verbatim and swaps the decoder
// for a lightweight reconstruction head.

namespace vxls {

enum class XlstmPlacement { none, enc, bot };

inline const char* to_string(XlstmPlacement p) {
    switch (p) {
        case XlstmPlacement::none: return "none";
        case XlstmPlacement::enc: return "enc";
        default: return "bot";
    }
}

inline XlstmPlacement placement_from_string(const std::string& s) {
    if (s == "none") return XlstmPlacement::none;
    if (s == "enc") return XlstmPlacement::enc;
    if (s == "bot") return XlstmPlacement::bot;
    throw InvalidConfig("unknown xlstm placement: " + s);
}

struct NetworkConfig {
    int in_channels = 2;
    int n_classes = 2;
    int stages = 4;
    int base_channels = 8;
    int blocks_per_stage = 1;
    int max_channels = 256;
    XlstmPlacement placement = XlstmPlacement::bot;
    std::array<std::int64_t, 3> patch_dims{32, 48, 40};
    // full-scale reference (not exercised at desk scale): stages=6,
    // base_channels=32, patch 128x192x160
    double leaky_slope = 0.01;

    std::int64_t channels(int stage) const {
        std::int64_t c = static_cast<std::int64_t>(base_channels) << stage;
        return std::min<std::int64_t>(c, max_channels);
    }
    std::int64_t downsample_factor() const { return std::int64_t(1) << (stages - 1); }

    void validate() const {
        if (in_channels < 1 || n_classes < 2 || stages < 2 || base_channels < 1 ||
            blocks_per_stage < 1 || max_channels < base_channels)
            throw InvalidConfig("network config out of range");
        for (auto d : patch_dims)
            if (d < downsample_factor() || d % downsample_factor() != 0)
                throw InvalidConfig("patch dims must be positive multiples of 2^(stages-1)");
    }

    bool xlstm_at(int stage) const {
        if (placement == XlstmPlacement::enc) return true;
        if (placement == XlstmPlacement::bot) return stage == stages - 1;
        return false;
    }
};

enum class ModelKind { segmentation, mae };

template <typename T>
struct ParamStoreT {
    std::map<std::string, TensorT<T>> by_name;

    TensorT<T>& at(const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("missing parameter: " + name);
        return it->second;
    }
    const TensorT<T>& at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("missing parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return by_name.count(name) != 0; }
    std::size_t size() const { return by_name.size(); }
    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& [k, v] : by_name) n += v.numel();
        return n;
    }
};

namespace detail {

// He-normal, keyed by (seed, parameter name) so initialization is
// order-independent and identical across builds and model variants.
template <typename T>
TensorT<T> he_normal(Shape s, std::uint64_t seed, const std::string& name, std::int64_t fan_in) {
    Rng rng(seed, Rng::fnv1a(name.c_str()));
    const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    return random_normal<T>(std::move(s), rng, stddev);
}

}  // namespace detail

template <typename T>
struct ModelT {
    NetworkConfig cfg;
    ModelKind kind = ModelKind::segmentation;
    std::uint64_t seed = 0;
    ParamStoreT<T> params;

    static ModelT build(const NetworkConfig& cfg, ModelKind kind, std::uint64_t seed) {
        cfg.validate();
        ModelT m;
        m.cfg = cfg;
        m.kind = kind;
        m.seed = seed;
        auto add_conv = [&](const std::string& n, std::int64_t co, std::int64_t ci,
                            std::int64_t k) {
            m.params.by_name.emplace(n + ".w", detail::he_normal<T>(Shape{co, ci, k, k, k}, seed,
                                                                    n + ".w", ci * k * k * k));
            m.params.by_name.emplace(n + ".b", TensorT<T>(Shape{co}));
        };
        auto add_tconv = [&](const std::string& n, std::int64_t ci, std::int64_t co) {
            m.params.by_name.emplace(
                n + ".w", detail::he_normal<T>(Shape{ci, co, 2, 2, 2}, seed, n + ".w", ci));
            m.params.by_name.emplace(n + ".b", TensorT<T>(Shape{co}));
        };
        auto add_norm = [&](const std::string& n, std::int64_t c) {
            m.params.by_name.emplace(n + ".g", TensorT<T>(Shape{c}, T(1)));
            m.params.by_name.emplace(n + ".b", TensorT<T>(Shape{c}));
        };
        auto add_mlstm = [&](const std::string& n, std::int64_t d) {
            for (const char* p : {"wq", "wk", "wv", "wo"})
                m.params.by_name.emplace(n + "." + p,
                                         detail::he_normal<T>(Shape{d, d}, seed, n + "." + p, d));
            m.params.by_name.emplace(n + ".wi", TensorT<T>(Shape{1, d}));
            m.params.by_name.emplace(n + ".wf", TensorT<T>(Shape{1, d}));
            m.params.by_name.emplace(n + ".bi", TensorT<T>(Shape{1, 1}));
            m.params.by_name.emplace(n + ".bf", TensorT<T>(Shape{1, 1}));
        };

        // encoder (shared between segmentation and MAE models)
        for (int s = 0; s < cfg.stages; ++s) {
            const std::int64_t ch = cfg.channels(s);
            const std::string sp = "enc.s" + std::to_string(s);
            if (s == 0)
                add_conv(sp + ".stem", ch, cfg.in_channels, 3);
            else
                add_conv(sp + ".down", ch, cfg.channels(s - 1), 3);
            for (int b = 0; b < cfg.blocks_per_stage; ++b) {
                const std::string bp = sp + ".blk" + std::to_string(b);
                add_conv(bp + ".conv1", ch, ch, 3);
                add_norm(bp + ".norm1", ch);
                add_conv(bp + ".conv2", ch, ch, 3);
                add_norm(bp + ".norm2", ch);
            }
            if (cfg.xlstm_at(s)) {
                add_norm(sp + ".xlstm.norm", ch);
                add_mlstm(sp + ".xlstm.fwd", ch);
                add_mlstm(sp + ".xlstm.bwd", ch);
            }
        }
        if (kind == ModelKind::segmentation) {
            for (int s = cfg.stages - 2; s >= 0; --s) {
                const std::string up = "dec.u" + std::to_string(s);
                add_tconv(up + ".up", cfg.channels(s + 1), cfg.channels(s));
                add_conv(up + ".conv1", cfg.channels(s), 2 * cfg.channels(s), 3);
                add_norm(up + ".norm1", cfg.channels(s));
                add_conv(up + ".conv2", cfg.channels(s), cfg.channels(s), 3);
                add_norm(up + ".norm2", cfg.channels(s));
            }
            add_conv("head", cfg.n_classes, cfg.channels(0), 1);
        } else {
            for (int s = cfg.stages - 2; s >= 0; --s) {
                const std::string up = "maedec.u" + std::to_string(s);
                add_tconv(up + ".up", cfg.channels(s + 1), cfg.channels(s));
                add_conv(up + ".conv", cfg.channels(s), cfg.channels(s), 3);
                add_norm(up + ".norm", cfg.channels(s));
            }
            add_conv("maedec.head", cfg.in_channels, cfg.channels(0), 1);
        }
        return m;
    }

    void bind(TapeT<T>& tp) {
        for (auto& [name, t] : params.by_name) tp.watch(t);
    }
    void unbind() {
        for (auto& [name, t] : params.by_name) {
            t.node = -1;
            t.requires_grad = false;
        }
    }

    // zero every parameter whose name contains `substr` (used to collapse
    // the xlstm branches onto the residual identity)
    int zero_params_matching(const std::string& substr) {
        int hits = 0;
        for (auto& [name, t] : params.by_name)
            if (name.find(substr) != std::string::npos) {
                std::fill(t.mut().begin(), t.mut().end(), T(0));
                ++hits;
            }
        return hits;
    }

    // run with parameters as they stand (bound or not); the _train/_eval
    // wrappers handle binding
    TensorT<T> forward(TapeT<T>& tp, const TensorT<T>& x) {
        if (x.rank() != 5 || x.shape[1] != cfg.in_channels)
            throw ShapeMismatch("forward: input must be [N, in_channels, D, H, W]");
        for (int a = 0; a < 3; ++a)
            if (x.shape[2 + a] % cfg.downsample_factor() != 0)
                throw ShapeMismatch("forward: spatial dims must be divisible by 2^(stages-1)");

        const T slope = static_cast<T>(cfg.leaky_slope);
        auto act = [&](const TensorT<T>& v) { return leaky_relu(tp, v, slope); };
        auto conv_b = [&](const TensorT<T>& v, const std::string& n, Stride3 st) {
            const TensorT<T>& w = params.at(n + ".w");
            const std::int64_t k = w.shape[2];
            Pad3 pad{k / 2, k / 2, k / 2};
            return add(tp, conv3d(tp, v, w, st, pad), params.at(n + ".b"));
        };
        auto cna = [&](const TensorT<T>& v, const std::string& cn, const std::string& nn) {
            return act(instance_norm(tp, conv_b(v, cn, Stride3{1, 1, 1}), params.at(nn + ".g"),
                                     params.at(nn + ".b")));
        };
        auto res_block = [&](const TensorT<T>& v, const std::string& bp) {
            TensorT<T> y = cna(v, bp + ".conv1", bp + ".norm1");
            y = cna(y, bp + ".conv2", bp + ".norm2");
            return add(tp, v, y);
        };
        auto xlstm_block = [&](const TensorT<T>& v, const std::string& sp) {
            const std::string xp = sp + ".xlstm";
            MlstmWeightsT<T> wf{params.at(xp + ".fwd.wq"), params.at(xp + ".fwd.wk"),
                                params.at(xp + ".fwd.wv"), params.at(xp + ".fwd.wo"),
                                params.at(xp + ".fwd.wi"), params.at(xp + ".fwd.wf"),
                                params.at(xp + ".fwd.bi"), params.at(xp + ".fwd.bf")};
            MlstmWeightsT<T> wb{params.at(xp + ".bwd.wq"), params.at(xp + ".bwd.wk"),
                                params.at(xp + ".bwd.wv"), params.at(xp + ".bwd.wo"),
                                params.at(xp + ".bwd.wi"), params.at(xp + ".bwd.wf"),
                                params.at(xp + ".bwd.bi"), params.at(xp + ".bwd.bf")};
            return bixlstm_block(tp, v, params.at(xp + ".norm.g"), params.at(xp + ".norm.b"), wf,
                                 wb);
        };

        std::vector<TensorT<T>> skips;
        TensorT<T> h = x;
        for (int s = 0; s < cfg.stages; ++s) {
            const std::string sp = "enc.s" + std::to_string(s);
            h = s == 0 ? conv_b(h, sp + ".stem", Stride3{1, 1, 1})
                       : conv_b(h, sp + ".down", Stride3{2, 2, 2});
            for (int b = 0; b < cfg.blocks_per_stage; ++b)
                h = res_block(h, sp + ".blk" + std::to_string(b));
            if (cfg.xlstm_at(s)) h = xlstm_block(h, sp);
            skips.push_back(h);
        }

        if (kind == ModelKind::segmentation) {
            for (int s = cfg.stages - 2; s >= 0; --s) {
                const std::string up = "dec.u" + std::to_string(s);
                h = add(tp, transposed_conv3d_x2(tp, h, params.at(up + ".up.w")),
                        params.at(up + ".up.b"));
                h = concat(tp, h, skips[static_cast<std::size_t>(s)], 1);
                h = cna(h, up + ".conv1", up + ".norm1");
                h = cna(h, up + ".conv2", up + ".norm2");
            }
            return conv_b(h, "head", Stride3{1, 1, 1});
        }
        for (int s = cfg.stages - 2; s >= 0; --s) {
            const std::string up = "maedec.u" + std::to_string(s);
            h = add(tp, transposed_conv3d_x2(tp, h, params.at(up + ".up.w")),
                    params.at(up + ".up.b"));
            h = cna(h, up + ".conv", up + ".norm");
        }
        return conv_b(h, "maedec.head", Stride3{1, 1, 1});
    }

    TensorT<T> forward_train(TapeT<T>& tp, const TensorT<T>& x) {
        bind(tp);
        return forward(tp, x);
    }
    TensorT<T> forward_eval(TapeT<T>& tp, const TensorT<T>& x) {
        unbind();
        return forward(tp, x);
    }
};

using Model = ModelT<float>;

// ----------------------------------------------------------- checkpoint IO
// binary format: magic "VXLS", u32 version, u64 header length, JSON header
// (stage tag, config, parameter directory with byte offsets), then raw
// little-endian float32 payloads.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadReport {
    int copied = 0;
    int fresh = 0;
};

void save_checkpoint(const Model& model, const std::string& path, const std::string& stage_tag);
Model load_checkpoint(const std::string& path, std::string* stage_tag = nullptr);

// copy every "enc."-prefixed parameter from src into dst; remaining dst
// parameters keep their fresh initialization
LoadReport load_encoder_into(Model& dst, const Model& src);

}  // namespace vxls
