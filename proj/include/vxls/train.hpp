#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vxls/augment.hpp"
#include "vxls/network.hpp"
#include "vxls/ops.hpp"
#include "vxls/volume.hpp"

namespace vxls {

// ------------------------------------------------------------------- splits

struct SplitsFile {
    struct Fold {
        std::vector<std::string> train;
        std::vector<std::string> val;
    };
    std::vector<Fold> folds;
};

// shuffled round-robin k-fold partition; val sizes differ by at most one
SplitsFile make_splits(std::vector<std::string> case_names, int k, std::uint64_t seed);

void save_splits(const SplitsFile& s, const std::string& path);
SplitsFile load_splits(const std::string& path);

// --------------------------------------------------------------------- loss

// Soft Dice (foreground channel, per sample, eps 1e-5) + voxel-mean
// cross-entropy over softmax probabilities. Target holds {0,1} labels.
template <typename T>
TensorT<T> dice_ce_loss(TapeT<T>& tp, const TensorT<T>& logits, const TensorT<T>& target,
                        T w_dice = T(1), T w_ce = T(1)) {
    if (logits.rank() != 5 || logits.shape[1] != 2)
        throw ShapeMismatch("dice_ce_loss: logits must be [N,2,D,H,W]");
    Shape tshape{logits.shape[0], 1, logits.shape[2], logits.shape[3], logits.shape[4]};
    if (numel_of(tshape) != target.numel())
        throw ShapeMismatch("dice_ce_loss: target/logits spatial mismatch");
    for (T v : target.data())
        if (v != T(0) && v != T(1)) throw NonBinaryTarget("dice_ce_loss: target not in {0,1}");
    const T eps = T(1e-5);

    TensorT<T> g = target;
    g.shape = tshape;  // view as [N,1,D,H,W]

    TensorT<T> logp = channel_log_softmax(tp, logits);
    TensorT<T> p = exp(tp, logp);
    TensorT<T> pf = narrow(tp, p, 1, 1, 1);

    TensorT<T> inter = sum_per_sample(tp, mul(tp, pf, g));
    TensorT<T> psum = sum_per_sample(tp, pf);
    TensorT<T> gsum = sum_per_sample(tp, g);
    TensorT<T> num = add_const(tp, mul_const(tp, inter, T(2)), eps);
    TensorT<T> den = add_const(tp, add(tp, psum, gsum), eps);
    TensorT<T> dice_term =
        mean_all(tp, sub(tp, TensorT<T>::full(Shape{logits.shape[0]}, T(1)), div(tp, num, den)));

    TensorT<T> logp_fg = narrow(tp, logp, 1, 1, 1);
    TensorT<T> logp_bg = narrow(tp, logp, 1, 0, 1);
    TensorT<T> one_minus_g = add_const(tp, neg(tp, g), T(1));
    TensorT<T> ll = add(tp, mul(tp, g, logp_fg), mul(tp, one_minus_g, logp_bg));
    TensorT<T> ce_term = neg(tp, mean_all(tp, ll));

    return add(tp, mul_const(tp, dice_term, w_dice), mul_const(tp, ce_term, w_ce));
}

// ---------------------------------------------------------------- optimizer

struct TrainConfig {
    double lr = 1e-2;
    double momentum = 0.99;
    bool nesterov = true;
    double poly_power = 0.9;  // lr(step) = lr * (1 - step/total)^power
    int batch_size = 1;
    int total_steps = 1000;
    double w_dice = 1.0;
    double w_ce = 1.0;
    std::uint64_t seed = 1234;
    double fg_bias = 0.5;
    bool augment = true;
    int val_every = 0;  // 0 = max(50, total/20)

    int effective_val_every() const {
        return val_every > 0 ? val_every : std::max(50, total_steps / 20);
    }
    void validate() const {
        if (!(lr > 0) || total_steps < 0 || batch_size < 1 || w_dice < 0 || w_ce < 0)
            throw InvalidConfig("train config out of range");
    }
};

// SGD with Nesterov momentum over a named parameter store
class SgdNesterov {
public:
    SgdNesterov(double momentum, bool nesterov) : momentum_(momentum), nesterov_(nesterov) {}

    void step(ParamStoreT<float>& params, TapeT<float>& tape, double lr);

private:
    double momentum_;
    bool nesterov_;
    std::map<std::string, std::vector<float>> velocity_;
};

double poly_lr(double base_lr, int step, int total, double power);

// ----------------------------------------------------------------- training

struct FinetuneOptions {
    std::string corpus_dir;
    NetworkConfig net;
    TrainConfig train;
    AugmentConfig aug;
    PreprocessConfig preprocess;
    std::optional<std::string> init_checkpoint;  // mae_pretrained
    std::string out_checkpoint;
    std::string out_log;  // CSV (step,loss); verification in <out_log>.val.csv
};

struct FinetuneResult {
    std::vector<double> losses;
    std::vector<std::pair<int, double>> val_dice;  // (step, mean val dice)
    int encoder_params_copied = 0;
    int params_fresh = 0;
};

FinetuneResult finetune(const SplitsFile& splits, int fold, const FinetuneOptions& opt);

// ----------------------------------------------------------------- ablation

struct AblationRow {
    std::string variant;
    double dice = 0, fnv_cm3 = 0, fpv_cm3 = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;  // scratch / enc+SSL / bot+SSL
    // paper reference values carried as metadata for qualitative comparison
    static constexpr double kPaperDice[3] = {0.543, 0.580, 0.582};
    static constexpr double kPaperFnv[3] = {23.26, 13.78, 15.08};
    static constexpr double kPaperFpv[3] = {15.05, 15.43, 13.69};
};

struct AblationOptions {
    std::string corpus_dir;
    std::string work_dir;
    NetworkConfig net;
    TrainConfig train;
    AugmentConfig aug;
    PreprocessConfig preprocess;
    int pretrain_steps = 300;
    int fold = 0;
};

AblationReport ablate(const AblationOptions& opt);
void write_ablation_report(const AblationReport& r, const std::string& csv_path,
                           const std::string& json_path);

}  // namespace vxls
