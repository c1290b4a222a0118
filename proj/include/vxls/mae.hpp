#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vxls/network.hpp"
#include "vxls/ops.hpp"
#include "vxls/rng.hpp"

namespace vxls {

// Stage 1: masked-autoencoder self-supervision. Convolutional-MAE style:
// cubes of the input are replaced by a fill value and a dense decoder
// reconstructs them; the loss sees masked voxels only.
struct MaeConfig {
    int mask_patch = 4;      // cubic masking unit, must divide the crop dims
    double mask_ratio = 0.6;
    double fill = 0.0;       // normalized-intensity mean

    void validate() const {
        if (mask_patch < 1) throw InvalidConfig("mask_patch must be >= 1");
        if (!(mask_ratio > 0.0) || !(mask_ratio < 1.0))
            throw InvalidConfig("mask_ratio must be in (0,1)");
    }
};

// Tile [N,C,D,H,W] into p^3 cubes, mask exactly round(ratio * n_cubes) of
// them per sample (uniform, without replacement) across all channels.
// Returns (masked input, 0/1 indicator of masked voxels).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> mask_volume(const TensorT<T>& x, const MaeConfig& cfg,
                                              Rng& rng) {
    cfg.validate();
    if (x.rank() != 5) throw ShapeMismatch("mask_volume: need [N,C,D,H,W]");
    const std::int64_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                       W = x.shape[4];
    const std::int64_t p = cfg.mask_patch;
    if (D % p || H % p || W % p)
        throw IndivisiblePatch("mask_volume: mask_patch must divide spatial dims");
    const std::int64_t gd = D / p, gh = H / p, gw = W / p;
    const std::int64_t n_cubes = gd * gh * gw;
    const std::int64_t n_masked = std::llround(cfg.mask_ratio * static_cast<double>(n_cubes));

    TensorT<T> masked = x;
    masked.store = std::make_shared<std::vector<T>>(x.data());  // private copy
    masked.node = -1;
    masked.requires_grad = false;
    TensorT<T> indicator(x.shape);

    std::vector<std::int64_t> cubes(static_cast<std::size_t>(n_cubes));
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < n_cubes; ++i) cubes[static_cast<std::size_t>(i)] = i;
        // partial Fisher-Yates: first n_masked entries are the selection
        for (std::int64_t i = 0; i < n_masked; ++i) {
            const std::int64_t j =
                i + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n_cubes - i)));
            std::swap(cubes[static_cast<std::size_t>(i)], cubes[static_cast<std::size_t>(j)]);
        }
        for (std::int64_t i = 0; i < n_masked; ++i) {
            const std::int64_t cube = cubes[static_cast<std::size_t>(i)];
            const std::int64_t cd = cube / (gh * gw), ch = (cube / gw) % gh, cw = cube % gw;
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t d = cd * p; d < (cd + 1) * p; ++d)
                    for (std::int64_t h = ch * p; h < (ch + 1) * p; ++h) {
                        const std::int64_t base = (((n * C + c) * D + d) * H + h) * W + cw * p;
                        for (std::int64_t w = 0; w < p; ++w) {
                            masked.mut()[static_cast<std::size_t>(base + w)] = static_cast<T>(cfg.fill);
                            indicator.mut()[static_cast<std::size_t>(base + w)] = T(1);
                        }
                    }
        }
    }
    return {masked, indicator};
}

// MSE over masked voxels only (both channels); gradients on unmasked voxels
// are exactly zero.
template <typename T>
TensorT<T> mae_loss(TapeT<T>& tp, const TensorT<T>& recon, const TensorT<T>& target,
                    const TensorT<T>& mask_indicator) {
    if (recon.shape != target.shape || recon.shape != mask_indicator.shape)
        throw ShapeMismatch("mae_loss: shape mismatch");
    T count(0);
    for (T v : mask_indicator.data()) count += v;
    if (count == T(0)) throw EmptyMask("mae_loss: empty mask indicator");
    TensorT<T> diff = mul(tp, sub(tp, recon, target), mask_indicator);
    return mul_const(tp, sum_all(tp, mul(tp, diff, diff)), T(1) / count);
}

struct PretrainConfig {
    int steps = 500;
    double lr = 1e-2;
    double momentum = 0.99;
    bool nesterov = true;
    double poly_power = 0.9;
    int batch_size = 1;
    std::uint64_t seed = 1234;
    double flip_p = 0.5;  // flips are the only pretraining augmentation
};

struct PretrainResult {
    std::vector<double> losses;  // one entry per step
    int steps_run = 0;
};

// Stage-1 driver: random crops from the corpus (flips only), cube masking,
// reconstruction MSE, SGD. Emits an `mae_pretrained` checkpoint and a CSV
// loss log (step,loss,pet_present).
PretrainResult pretrain(const std::vector<std::string>& corpus_dirs, const NetworkConfig& netcfg,
                        const MaeConfig& maecfg, const PretrainConfig& cfg,
                        const std::string& out_checkpoint, const std::string& out_log);

}  // namespace vxls
