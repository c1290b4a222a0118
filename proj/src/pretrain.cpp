#include "vxls/mae.hpp"

#include <cmath>
#include <fstream>

#include "vxls/augment.hpp"
#include "vxls/train.hpp"
#include "vxls/volume.hpp"

namespace vxls {

namespace {

// batch tensor layout: channel 0 = CT, channel 1 = PET
Tensor cases_to_tensor(const std::vector<const Case*>& batch,
                       const std::array<std::int64_t, 3>& dims) {
    const std::int64_t n = static_cast<std::int64_t>(batch.size());
    Tensor t(Shape{n, 2, dims[0], dims[1], dims[2]});
    auto& buf = t.mut();
    const std::int64_t plane = dims[0] * dims[1] * dims[2];
    for (std::int64_t b = 0; b < n; ++b) {
        std::copy(batch[b]->ct.data.begin(), batch[b]->ct.data.end(),
                  buf.begin() + (b * 2 + 0) * plane);
        std::copy(batch[b]->pet.data.begin(), batch[b]->pet.data.end(),
                  buf.begin() + (b * 2 + 1) * plane);
    }
    return t;
}

}  // namespace

PretrainResult pretrain(const std::vector<std::string>& corpus_dirs, const NetworkConfig& netcfg,
                        const MaeConfig& maecfg, const PretrainConfig& cfg,
                        const std::string& out_checkpoint, const std::string& out_log) {
    netcfg.validate();
    maecfg.validate();
    for (auto d : netcfg.patch_dims)
        if (d % maecfg.mask_patch != 0)
            throw IndivisiblePatch("mask_patch must divide the crop dims");

    PreprocessConfig pre;
    std::vector<Case> pool;
    for (const auto& dir : corpus_dirs) {
        for (const auto& name : read_manifest(dir))
            pool.push_back(preprocess_case(load_case(dir, name, false, false), pre));
    }
    if (pool.empty()) throw IoError("pretraining corpus is empty");

    Model model = Model::build(netcfg, ModelKind::mae, cfg.seed);
    SgdNesterov opt(cfg.momentum, cfg.nesterov);
    AugmentConfig flips_only = AugmentConfig::disabled();
    flips_only.p_flip_per_axis = cfg.flip_p;

    std::ofstream log(out_log, std::ios::trunc);
    if (!log) throw IoError("cannot write " + out_log);
    log << "step,loss,pet_present\n";

    PretrainResult result;
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng(cfg.seed ^ 0x4d41455354455054ULL, static_cast<std::uint64_t>(step));
        std::vector<Case> patches;
        std::vector<const Case*> batch;
        int pet_present = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Case& c = pool[rng.uniform_int(pool.size())];
            Case patch = crop_patch(c, netcfg.patch_dims, 0.0, rng);
            patches.push_back(augment(patch, flips_only, rng));
            pet_present += patches.back().pet_present ? 1 : 0;
        }
        for (const auto& p : patches) batch.push_back(&p);
        Tensor target = cases_to_tensor(batch, netcfg.patch_dims);
        auto [masked, indicator] = mask_volume(target, maecfg, rng);

        Tape tape;
        Tensor recon = model.forward_train(tape, masked);
        Tensor loss = mae_loss(tape, recon, target, indicator);
        const double lval = loss.scalar();
        if (!std::isfinite(lval)) throw DivergedLoss("pretrain loss is not finite");
        tape.backward(loss);
        opt.step(model.params, tape, poly_lr(cfg.lr, step, cfg.steps, cfg.poly_power));

        result.losses.push_back(lval);
        log << step << ',' << lval << ',' << pet_present << '\n';
    }
    result.steps_run = cfg.steps;
    save_checkpoint(model, out_checkpoint, "mae_pretrained");
    return result;
}

}  // namespace vxls
