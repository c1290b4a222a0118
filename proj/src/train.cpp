#include "vxls/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vxls/infer.hpp"
#include "vxls/mae.hpp"
#include "vxls/metrics.hpp"
#include "vxls/rng.hpp"

namespace vxls {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------- splits

SplitsFile make_splits(std::vector<std::string> case_names, int k, std::uint64_t seed) {
    if (static_cast<int>(case_names.size()) < k)
        throw TooFewCases("need at least k cases for k-fold splits");
    if (k < 2) throw InvalidConfig("k must be >= 2");
    Rng rng(seed, 0x53504c4954ULL);
    rng.shuffle(case_names);
    SplitsFile s;
    s.folds.resize(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < case_names.size(); ++i)
        s.folds[i % static_cast<std::size_t>(k)].val.push_back(case_names[i]);
    for (int f = 0; f < k; ++f) {
        for (std::size_t i = 0; i < case_names.size(); ++i)
            if (i % static_cast<std::size_t>(k) != static_cast<std::size_t>(f))
                s.folds[static_cast<std::size_t>(f)].train.push_back(case_names[i]);
        std::sort(s.folds[static_cast<std::size_t>(f)].train.begin(),
                  s.folds[static_cast<std::size_t>(f)].train.end());
        std::sort(s.folds[static_cast<std::size_t>(f)].val.begin(),
                  s.folds[static_cast<std::size_t>(f)].val.end());
    }
    return s;
}

void save_splits(const SplitsFile& s, const std::string& path) {
    json j = json::array();
    for (const auto& f : s.folds) j.push_back({{"train", f.train}, {"val", f.val}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

SplitsFile load_splits(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
        SplitsFile s;
        for (const auto& f : j)
            s.folds.push_back({f.at("train").get<std::vector<std::string>>(),
                               f.at("val").get<std::vector<std::string>>()});
        return s;
    } catch (const json::exception& e) {
        throw MalformedHeader(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------- optimizer

double poly_lr(double base_lr, int step, int total, double power) {
    if (total <= 0) return base_lr;
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
    return base_lr * std::pow(std::max(frac, 0.0), power);
}

void SgdNesterov::step(ParamStoreT<float>& params, TapeT<float>& tape, double lr) {
    for (auto& [name, p] : params.by_name) {
        if (p.node < 0) continue;
        const Tensor g = tape.grad(p);
        auto& v = velocity_[name];
        if (v.empty()) v.assign(p.data().size(), 0.f);
        auto& pd = p.mut();
        const auto& gd = g.data();
        const float mu = static_cast<float>(momentum_);
        const float eta = static_cast<float>(lr);
        if (nesterov_) {
            for (std::size_t i = 0; i < pd.size(); ++i) {
                v[i] = mu * v[i] + gd[i];
                pd[i] -= eta * (gd[i] + mu * v[i]);
            }
        } else {
            for (std::size_t i = 0; i < pd.size(); ++i) {
                v[i] = mu * v[i] + gd[i];
                pd[i] -= eta * v[i];
            }
        }
    }
}

// ----------------------------------------------------------------- training

namespace {

Tensor patch_to_tensor(const std::vector<Case>& patches) {
    const auto dims = patches[0].ct.dims;
    const std::int64_t n = static_cast<std::int64_t>(patches.size());
    const std::int64_t plane = dims[0] * dims[1] * dims[2];
    Tensor t(Shape{n, 2, dims[0], dims[1], dims[2]});
    auto& buf = t.mut();
    for (std::int64_t b = 0; b < n; ++b) {
        std::copy(patches[b].ct.data.begin(), patches[b].ct.data.end(),
                  buf.begin() + (b * 2 + 0) * plane);
        std::copy(patches[b].pet.data.begin(), patches[b].pet.data.end(),
                  buf.begin() + (b * 2 + 1) * plane);
    }
    return t;
}

Tensor masks_to_tensor(const std::vector<Case>& patches) {
    const auto dims = patches[0].ct.dims;
    const std::int64_t n = static_cast<std::int64_t>(patches.size());
    const std::int64_t plane = dims[0] * dims[1] * dims[2];
    Tensor t(Shape{n, 1, dims[0], dims[1], dims[2]});
    auto& buf = t.mut();
    for (std::int64_t b = 0; b < n; ++b)
        std::copy(patches[b].mask->data.begin(), patches[b].mask->data.end(),
                  buf.begin() + b * plane);
    return t;
}

}  // namespace

FinetuneResult finetune(const SplitsFile& splits, int fold, const FinetuneOptions& opt) {
    if (fold < 0 || fold >= static_cast<int>(splits.folds.size()))
        throw InvalidConfig("fold index out of range");
    opt.net.validate();
    opt.train.validate();

    const auto& fold_def = splits.folds[static_cast<std::size_t>(fold)];
    CorpusCache train_cases =
        load_preprocessed(opt.corpus_dir, fold_def.train, opt.preprocess, true, true);
    CorpusCache val_cases = load_preprocessed(opt.corpus_dir, fold_def.val, opt.preprocess, true, true);

    Model model = Model::build(opt.net, ModelKind::segmentation, opt.train.seed);
    FinetuneResult result;
    if (opt.init_checkpoint) {
        Model init = load_checkpoint(*opt.init_checkpoint);
        try {
            LoadReport rep = load_encoder_into(model, init);
            result.encoder_params_copied = rep.copied;
            result.params_fresh = rep.fresh;
        } catch (const ShapeConflict& e) {
            throw IncompatibleInit(std::string("init checkpoint incompatible: ") + e.what());
        }
    }

    SgdNesterov sgd(opt.train.momentum, opt.train.nesterov);
    InferConfig icfg;
    icfg.patch_dims = opt.net.patch_dims;

    std::ofstream log(opt.out_log, std::ios::trunc);
    if (!log) throw IoError("cannot write " + opt.out_log);
    log << "step,loss\n";
    std::ofstream vlog(opt.out_log + ".val.csv", std::ios::trunc);
    vlog << "step,mean_val_dice\n";

    const int val_every = opt.train.effective_val_every();
    for (int step = 0; step < opt.train.total_steps; ++step) {
        Rng rng(opt.train.seed ^ 0x46494e4554554e45ULL, static_cast<std::uint64_t>(step));
        std::vector<Case> patches;
        for (int b = 0; b < opt.train.batch_size; ++b) {
            const Case& c = train_cases.cases[rng.uniform_int(train_cases.cases.size())];
            Case patch = crop_patch(c, opt.net.patch_dims, opt.train.fg_bias, rng);
            if (opt.train.augment) patch = augment(patch, opt.aug, rng);
            patches.push_back(std::move(patch));
        }
        Tensor input = patch_to_tensor(patches);
        Tensor target = masks_to_tensor(patches);
        // nearest-interpolated masks stay binary; clamp any stray values
        for (auto& v : target.mut()) v = v > 0.5f ? 1.f : 0.f;

        Tape tape;
        Tensor logits = model.forward_train(tape, input);
        Tensor loss = dice_ce_loss(tape, logits, target, static_cast<float>(opt.train.w_dice),
                                   static_cast<float>(opt.train.w_ce));
        const double lval = loss.scalar();
        if (!std::isfinite(lval)) throw DivergedLoss("finetune loss is not finite");
        tape.backward(loss);
        sgd.step(model.params, tape,
                 poly_lr(opt.train.lr, step, opt.train.total_steps, opt.train.poly_power));

        result.losses.push_back(lval);
        log << step << ',' << lval << '\n';

        if (!val_cases.cases.empty() &&
            ((step + 1) % val_every == 0 || step + 1 == opt.train.total_steps)) {
            double mean_dice = 0;
            for (const auto& vc : val_cases.cases) {
                Volume prob = sliding_window(model, vc.ct, vc.pet, icfg);
                mean_dice += dice(binarize(prob), *vc.mask);
            }
            mean_dice /= static_cast<double>(val_cases.cases.size());
            result.val_dice.emplace_back(step + 1, mean_dice);
            vlog << step + 1 << ',' << mean_dice << '\n';
        }
    }
    save_checkpoint(model, opt.out_checkpoint, "finetuned");
    return result;
}

// ----------------------------------------------------------------- ablation

AblationReport ablate(const AblationOptions& opt) {
    const std::vector<std::string> names = read_manifest(opt.corpus_dir);
    if (names.size() < 10) throw TooFewCases("ablation needs a corpus of at least 10 cases");
    fs::create_directories(opt.work_dir);

    SplitsFile splits = make_splits(names, 5, opt.train.seed);
    const auto& fold_def = splits.folds[static_cast<std::size_t>(opt.fold)];
    CorpusCache val_cases = load_preprocessed(opt.corpus_dir, fold_def.val, opt.preprocess, true, true);

    MaeConfig maecfg;
    PretrainConfig pcfg;
    pcfg.steps = opt.pretrain_steps;
    pcfg.seed = opt.train.seed;

    auto run_variant = [&](const std::string& label, XlstmPlacement placement,
                           bool ssl) -> AblationRow {
        NetworkConfig net = opt.net;
        net.placement = placement;
        const std::string tag = label;
        FinetuneOptions fopt;
        fopt.corpus_dir = opt.corpus_dir;
        fopt.net = net;
        fopt.train = opt.train;
        fopt.aug = opt.aug;
        fopt.preprocess = opt.preprocess;
        fopt.out_checkpoint = (fs::path(opt.work_dir) / (tag + ".ckpt")).string();
        fopt.out_log = (fs::path(opt.work_dir) / (tag + ".loss.csv")).string();
        if (ssl) {
            const std::string mae_ckpt = (fs::path(opt.work_dir) / (tag + "_mae.ckpt")).string();
            pretrain({opt.corpus_dir}, net, maecfg, pcfg, mae_ckpt,
                     (fs::path(opt.work_dir) / (tag + "_mae.loss.csv")).string());
            fopt.init_checkpoint = mae_ckpt;
        }
        finetune(splits, opt.fold, fopt);

        Model model = load_checkpoint(fopt.out_checkpoint);
        InferConfig icfg;
        icfg.patch_dims = net.patch_dims;
        std::vector<SegScore> scores;
        for (const auto& vc : val_cases.cases) {
            Volume pred = binarize(sliding_window(model, vc.ct, vc.pet, icfg));
            scores.push_back(score_case(vc.name, pred, *vc.mask));
        }
        const AggregateScore agg = aggregate(scores);
        return AblationRow{label, agg.dice, agg.fnv_cm3, agg.fpv_cm3};
    };

    AblationReport report;
    report.rows.push_back(run_variant("bixlstm_resnet_scratch", XlstmPlacement::bot, false));
    report.rows.push_back(run_variant("bixlstm_resnet_enc_ssl", XlstmPlacement::enc, true));
    report.rows.push_back(run_variant("bixlstm_resnet_bot_ssl", XlstmPlacement::bot, true));
    return report;
}

void write_ablation_report(const AblationReport& r, const std::string& csv_path,
                           const std::string& json_path) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path);
    csv << "variant,mean_dice,mean_fnv_cm3,mean_fpv_cm3\n";
    for (const auto& row : r.rows)
        csv << row.variant << ',' << row.dice << ',' << row.fnv_cm3 << ',' << row.fpv_cm3 << '\n';

    json j;
    j["rows"] = json::array();
    for (const auto& row : r.rows)
        j["rows"].push_back({{"variant", row.variant},
                             {"mean_dice", row.dice},
                             {"mean_fnv_cm3", row.fnv_cm3},
                             {"mean_fpv_cm3", row.fpv_cm3}});
    j["reference"] = {{"source", "autopet task 1 leaderboard values for the three variants"},
                      {"dice", {0.543, 0.580, 0.582}},
                      {"fnv_cm3", {23.26, 13.78, 15.08}},
                      {"fpv_cm3", {15.05, 15.43, 13.69}}};
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + json_path);
    out << j.dump(2) << '\n';
}

}  // namespace vxls
