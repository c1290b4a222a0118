#include "vxls/infer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vxls {

namespace {

std::vector<std::int64_t> tile_positions(std::int64_t dim, std::int64_t patch, double overlap) {
    std::vector<std::int64_t> pos;
    const std::int64_t stride =
        std::max<std::int64_t>(1, std::llround(static_cast<double>(patch) * (1.0 - overlap)));
    std::int64_t p = 0;
    for (;;) {
        pos.push_back(std::min(p, dim - patch));
        if (p + patch >= dim) break;
        p += stride;
    }
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    return pos;
}

Volume flip_vol(const Volume& v, unsigned mask) {
    if (mask == 0) return v;
    Volume out = Volume::make(v.dims, v.spacing_mm, v.kind);
    const auto [D, H, W] = v.dims;
    const bool fd = mask & 4u, fh = mask & 2u, fw = mask & 1u;
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w)
                out.at(d, h, w) = v.at(fd ? D - 1 - d : d, fh ? H - 1 - h : h, fw ? W - 1 - w : w);
    return out;
}

// pad by edge replication so every axis is at least `patch`
Volume pad_to(const Volume& v, const std::array<std::int64_t, 3>& minimum) {
    std::array<std::int64_t, 3> td;
    bool need = false;
    for (int a = 0; a < 3; ++a) {
        td[a] = std::max(v.dims[a], minimum[a]);
        need |= td[a] != v.dims[a];
    }
    if (!need) return v;
    Volume out = Volume::make(td, v.spacing_mm, v.kind);
    for (std::int64_t d = 0; d < td[0]; ++d)
        for (std::int64_t h = 0; h < td[1]; ++h)
            for (std::int64_t w = 0; w < td[2]; ++w)
                out.at(d, h, w) = v.at(std::min(d, v.dims[0] - 1), std::min(h, v.dims[1] - 1),
                                       std::min(w, v.dims[2] - 1));
    return out;
}

}  // namespace

Volume sliding_window(Model& model, const Volume& ct, const Volume& pet, const InferConfig& cfg) {
    if (ct.dims != pet.dims) throw ShapeMismatch("sliding_window: CT/PET dims differ");
    const auto patch = cfg.patch_dims;
    const Volume cti = pad_to(ct, patch);
    const Volume peti = pad_to(pet, patch);
    const auto dims = cti.dims;

    std::vector<std::int64_t> pd = tile_positions(dims[0], patch[0], cfg.overlap);
    std::vector<std::int64_t> ph = tile_positions(dims[1], patch[1], cfg.overlap);
    std::vector<std::int64_t> pw = tile_positions(dims[2], patch[2], cfg.overlap);
    const std::size_t n_tiles = pd.size() * ph.size() * pw.size();

    // Gaussian importance map, sigma = patch/8 per axis
    const std::int64_t pn = patch[0] * patch[1] * patch[2];
    std::vector<float> weight(static_cast<std::size_t>(pn));
    {
        auto axis_w = [&](std::int64_t n, double div) {
            std::vector<double> w(static_cast<std::size_t>(n));
            const double c = 0.5 * static_cast<double>(n - 1);
            const double s = static_cast<double>(n) / div;
            for (std::int64_t i = 0; i < n; ++i) {
                const double z = (static_cast<double>(i) - c) / s;
                w[static_cast<std::size_t>(i)] = std::exp(-0.5 * z * z);
            }
            return w;
        };
        const auto wd = axis_w(patch[0], cfg.gaussian_sigma_div);
        const auto wh = axis_w(patch[1], cfg.gaussian_sigma_div);
        const auto ww = axis_w(patch[2], cfg.gaussian_sigma_div);
        std::int64_t i = 0;
        for (std::int64_t d = 0; d < patch[0]; ++d)
            for (std::int64_t h = 0; h < patch[1]; ++h)
                for (std::int64_t w = 0; w < patch[2]; ++w, ++i)
                    weight[static_cast<std::size_t>(i)] = static_cast<float>(
                        wd[static_cast<std::size_t>(d)] * wh[static_cast<std::size_t>(h)] *
                        ww[static_cast<std::size_t>(w)]);
    }

    Volume prob = Volume::make(dims, cti.spacing_mm, VolumeKind::PET);
    std::vector<float> wacc(prob.data.size(), 0.f);

    const std::int64_t PD = patch[0], PH = patch[1], PW = patch[2];
    for (std::int64_t d0 : pd)
        for (std::int64_t h0 : ph)
            for (std::int64_t w0 : pw) {
                Tensor in(Shape{1, 2, PD, PH, PW});
                {
                    auto& buf = in.mut();
                    std::int64_t i = 0;
                    for (std::int64_t d = 0; d < PD; ++d)
                        for (std::int64_t h = 0; h < PH; ++h)
                            for (std::int64_t w = 0; w < PW; ++w, ++i)
                                buf[static_cast<std::size_t>(i)] = cti.at(d0 + d, h0 + h, w0 + w);
                    for (std::int64_t d = 0; d < PD; ++d)
                        for (std::int64_t h = 0; h < PH; ++h)
                            for (std::int64_t w = 0; w < PW; ++w, ++i)
                                buf[static_cast<std::size_t>(i)] = peti.at(d0 + d, h0 + h, w0 + w);
                }
                Tape tp;
                Tensor logits = model.forward_eval(tp, in);
                Tensor pfg = narrow(tp, vxls::exp(tp, channel_log_softmax(tp, logits)), 1, 1, 1);
                const auto& pv = pfg.data();
                if (n_tiles == 1) {
                    std::copy(pv.begin(), pv.end(), prob.data.begin());
                } else {
                    std::int64_t i = 0;
                    for (std::int64_t d = 0; d < PD; ++d)
                        for (std::int64_t h = 0; h < PH; ++h)
                            for (std::int64_t w = 0; w < PW; ++w, ++i) {
                                const std::size_t oi = static_cast<std::size_t>(
                                    ((d0 + d) * dims[1] + (h0 + h)) * dims[2] + (w0 + w));
                                prob.data[oi] += pv[static_cast<std::size_t>(i)] *
                                                 weight[static_cast<std::size_t>(i)];
                                wacc[oi] += weight[static_cast<std::size_t>(i)];
                            }
                }
            }
    if (n_tiles > 1)
        for (std::size_t i = 0; i < prob.data.size(); ++i) prob.data[i] /= wacc[i];

    // crop padding back off
    if (dims != ct.dims) {
        Volume cropped = Volume::make(ct.dims, ct.spacing_mm, VolumeKind::PET);
        for (std::int64_t d = 0; d < ct.dims[0]; ++d)
            for (std::int64_t h = 0; h < ct.dims[1]; ++h)
                for (std::int64_t w = 0; w < ct.dims[2]; ++w) cropped.at(d, h, w) = prob.at(d, h, w);
        return cropped;
    }
    prob.spacing_mm = ct.spacing_mm;
    return prob;
}

Volume tta_predict(Model& model, const Volume& ct, const Volume& pet, const InferConfig& cfg,
                   bool tta) {
    if (!tta) return sliding_window(model, ct, pet, cfg);
    std::vector<Volume> terms;
    terms.reserve(8);
    for (unsigned g = 0; g < 8; ++g) {
        Volume p = sliding_window(model, flip_vol(ct, g), flip_vol(pet, g), cfg);
        terms.push_back(flip_vol(p, g));  // flips are involutions
    }
    // balanced tree over the flip index: invariant under XOR relabeling of
    // the group, so TTA commutes with input flips bit-for-bit
    for (unsigned stride = 1; stride < 8; stride <<= 1)
        for (unsigned g = 0; g < 8; g += 2 * stride)
            for (std::size_t i = 0; i < terms[g].data.size(); ++i)
                terms[g].data[i] += terms[g + stride].data[i];
    Volume out = std::move(terms[0]);
    for (auto& x : out.data) x *= 0.125f;
    return out;
}

Volume binarize(const Volume& prob, double threshold) {
    Volume out = Volume::make(prob.dims, prob.spacing_mm, VolumeKind::MASK);
    for (std::size_t i = 0; i < prob.data.size(); ++i)
        out.data[i] = prob.data[i] > threshold ? 1.f : 0.f;
    return out;
}

}  // namespace vxls
