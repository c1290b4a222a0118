#include "vxls/gradcheck.hpp"

#include <cstdio>

#include "vxls/conv.hpp"
#include "vxls/mae.hpp"
#include "vxls/mlstm.hpp"
#include "vxls/network.hpp"
#include "vxls/ops.hpp"
#include "vxls/train.hpp"

namespace vxls {

namespace {

// random values kept away from the kinks of relu/leaky_relu/abs/maximum so
// the finite differences straddle a smooth region
TensorD smooth_point(Shape s, Rng& rng) {
    TensorD t(std::move(s));
    for (auto& v : t.mut()) {
        const double mag = rng.uniform(0.25, 1.5);
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

TensorD positive_point(Shape s, Rng& rng) {
    TensorD t(std::move(s));
    for (auto& v : t.mut()) v = rng.uniform(0.5, 2.0);
    return t;
}

MlstmWeightsT<double> random_mlstm(std::int64_t d, Rng& rng) {
    MlstmWeightsT<double> w = MlstmWeightsT<double>::zeros(d);
    for (TensorD* t : {&w.wq, &w.wk, &w.wv, &w.wo, &w.wi, &w.wf, &w.bi, &w.bf})
        for (auto& v : t->mut()) v = 0.4 * rng.normal();
    return w;
}

}  // namespace

GradSuiteResult run_gradient_suite(bool verbose) {
    GradSuiteResult result;
    auto check = [&](const std::string& name, double tol, double h, const GradcheckFn& f,
                     std::vector<TensorD> leaves) {
        double err = 0;
        try {
            err = gradcheck(f, std::move(leaves), h);
        } catch (const std::exception& e) {
            err = 1e30;
            if (verbose) std::printf("  %-34s EXCEPTION %s\n", name.c_str(), e.what());
        }
        GradSuiteEntry entry{name, err, tol, err < tol};
        if (verbose)
            std::printf("  %-34s rel_err %.3e  tol %.0e  %s\n", name.c_str(), err, tol,
                        entry.passed ? "ok" : "FAIL");
        result.entries.push_back(entry);
        result.all_passed &= entry.passed;
    };

    const double tol_op = 1e-4, tol_comp = 1e-3, h = 1e-4;

    // elementwise ops, 5 random points each
    for (int pt = 0; pt < 5; ++pt) {
        Rng rng(17, static_cast<std::uint64_t>(pt));
        const Shape s{2, 3, 4};
        auto mk = [&] { return smooth_point(s, rng); };
        check("add/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  return sum_all(tp, add(tp, v[0], v[1]));
              },
              {mk(), mk()});
        check("sub.neg/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  return sum_all(tp, sub(tp, v[0], neg(tp, v[1])));
              },
              {mk(), mk()});
        check("mul.bcast_chan/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  return sum_all(tp, mul(tp, v[0], v[1]));
              },
              {mk(), smooth_point(Shape{3}, rng)});
        check("div/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) { return sum_all(tp, div(tp, v[0], v[1])); },
              {mk(), positive_point(s, rng)});
        check("maximum/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  return sum_all(tp, maximum(tp, v[0], v[1]));
              },
              {mk(), mk()});
        check("exp.log.sigmoid.tanh/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD a = sigmoid(tp, v[0]);
                  TensorD b = tanh(tp, exp(tp, mul_const(tp, v[0], 0.5)));
                  return sum_all(tp, mul(tp, a, add(tp, b, log(tp, v[1]))));
              },
              {mk(), positive_point(s, rng)});
        check("relu.leaky.abs/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD a = relu(tp, v[0]);
                  TensorD b = leaky_relu(tp, v[0], 0.01);
                  return sum_all(tp, add(tp, abs(tp, a), b));
              },
              {mk()});
        check("matmul/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  return sum_all(tp, sigmoid(tp, matmul(tp, v[0], v[1])));
              },
              {smooth_point(Shape{3, 4}, rng), smooth_point(Shape{4, 2}, rng)});
        check("reductions.narrow.concat/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD c = concat(tp, v[0], v[1], 1);
                  TensorD n = narrow(tp, c, 1, 1, 4);
                  return mean_all(tp, mul(tp, sum_per_sample(tp, n),
                                          sum_per_sample(tp, reshape(tp, v[0], Shape{2, 12}))));
              },
              {mk(), mk()});
        check("log_softmax/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD ls = channel_log_softmax(tp, v[0]);
                  return sum_all(tp, mul(tp, ls, v[1]));
              },
              {mk(), mk()});
        check("tokens_roundtrip/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD tok = volume_to_tokens(tp, v[0]);
                  TensorD back = tokens_to_volume(tp, sigmoid(tp, tok), 2, 2, 3);
                  return sum_all(tp, mul(tp, back, back));
              },
              {smooth_point(Shape{1, 2, 2, 2, 3}, rng)});
    }

    // conv family
    for (int pt = 0; pt < 5; ++pt) {
        Rng rng(29, static_cast<std::uint64_t>(pt));
        check("conv3d_s1/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD y = conv3d(tp, v[0], v[1], Stride3{1, 1, 1}, Pad3{1, 1, 1});
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{1, 2, 4, 4, 4}, rng), smooth_point(Shape{3, 2, 3, 3, 3}, rng)});
        check("conv3d_s2/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD y = conv3d(tp, v[0], v[1], Stride3{2, 2, 2}, Pad3{1, 1, 1});
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{1, 2, 4, 6, 4}, rng), smooth_point(Shape{2, 2, 3, 3, 3}, rng)});
        check("transposed_conv/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD y = transposed_conv3d_x2(tp, v[0], v[1]);
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{1, 2, 2, 3, 2}, rng), smooth_point(Shape{2, 2, 2, 2, 2}, rng)});
        check("trilinear_upsample/" + std::to_string(pt), tol_op, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD y = trilinear_upsample_x2(tp, v[0]);
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{1, 1, 2, 2, 2}, rng)});
        check("instance_norm/" + std::to_string(pt), tol_comp, h,
              [](TapeD& tp, std::vector<TensorD>& v) {
                  TensorD y = instance_norm(tp, v[0], v[1], v[2]);
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{1, 2, 3, 3, 3}, rng), smooth_point(Shape{2}, rng),
               smooth_point(Shape{2}, rng)});
    }

    // mlstm: composite step, fused sequence, bidirectional, residual block
    for (int pt = 0; pt < 5; ++pt) {
        Rng rng(43, static_cast<std::uint64_t>(pt));
        const std::int64_t d = 3;
        MlstmWeightsT<double> w = random_mlstm(d, rng);
        check("mlstm_step/" + std::to_string(pt), tol_op, h,
              [d](TapeD& tp, std::vector<TensorD>& v) {
                  MlstmWeightsT<double> wt{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
                  MlstmStateT<double> st = MlstmStateT<double>::zeros(d);
                  auto [s1, h1] = mlstm_step(tp, st, reshape(tp, narrow(tp, v[0], 0, 0, 1), Shape{d, 1}), wt);
                  auto [s2, h2] = mlstm_step(tp, s1, reshape(tp, narrow(tp, v[0], 0, 1, 1), Shape{d, 1}), wt);
                  return sum_all(tp, add(tp, mul(tp, h1, h1), mul(tp, h2, h2)));
              },
              {smooth_point(Shape{2, d}, rng), w.wq, w.wk, w.wv, w.wo, w.wi, w.wf, w.bi, w.bf});
        check("bidirectional_mlstm_T4/" + std::to_string(pt), tol_op, h,
              [d](TapeD& tp, std::vector<TensorD>& v) {
                  MlstmWeightsT<double> wf{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
                  MlstmWeightsT<double> wb{v[2], v[1], v[4], v[3], v[6], v[5], v[8], v[7]};
                  TensorD y = bidirectional_mlstm(tp, v[0], wf, wb);
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{4, d}, rng), w.wq, w.wk, w.wv, w.wo, w.wi, w.wf, w.bi, w.bf});
        check("bixlstm_block/" + std::to_string(pt), tol_comp, h,
              [d](TapeD& tp, std::vector<TensorD>& v) {
                  MlstmWeightsT<double> wf{v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
                  TensorD y = bixlstm_block(tp, v[0], v[1], v[2], wf, wf);
                  return sum_all(tp, mul(tp, y, y));
              },
              {smooth_point(Shape{1, d, 2, 2, 2}, rng), smooth_point(Shape{d}, rng),
               smooth_point(Shape{d}, rng), w.wq, w.wk, w.wv, w.wo, w.wi, w.wf, w.bi, w.bf});
    }

    // losses
    for (int pt = 0; pt < 5; ++pt) {
        Rng rng(57, static_cast<std::uint64_t>(pt));
        TensorD target(Shape{2, 1, 2, 2, 2});
        for (auto& v : target.mut()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        check("dice_ce_loss/" + std::to_string(pt), tol_comp, h,
              [target](TapeD& tp, std::vector<TensorD>& v) {
                  return dice_ce_loss(tp, v[0], target);
              },
              {smooth_point(Shape{2, 2, 2, 2, 2}, rng)});
        TensorD mask(Shape{1, 2, 2, 2, 2});
        for (std::size_t i = 0; i < mask.mut().size(); ++i) mask.mut()[i] = (i % 3 == 0) ? 1.0 : 0.0;
        TensorD tgt = smooth_point(Shape{1, 2, 2, 2, 2}, rng);
        check("mae_loss/" + std::to_string(pt), tol_op, h,
              [mask, tgt](TapeD& tp, std::vector<TensorD>& v) {
                  return mae_loss(tp, v[0], tgt, mask);
              },
              {smooth_point(Shape{1, 2, 2, 2, 2}, rng)});
    }

    // full tiny network loss over every parameter (both placements)
    for (XlstmPlacement placement : {XlstmPlacement::bot, XlstmPlacement::enc}) {
        NetworkConfig cfg;
        cfg.stages = 2;
        cfg.base_channels = 2;
        cfg.blocks_per_stage = 1;
        cfg.patch_dims = {4, 4, 4};
        cfg.placement = placement;
        ModelT<double> model = ModelT<double>::build(cfg, ModelKind::segmentation, 2024);

        Rng rng(71, placement == XlstmPlacement::bot ? 0 : 1);
        TensorD input = smooth_point(Shape{1, 2, 4, 4, 4}, rng);
        TensorD target(Shape{1, 1, 4, 4, 4});
        for (auto& v : target.mut()) v = rng.bernoulli(0.35) ? 1.0 : 0.0;

        std::vector<TensorD> leaves;
        std::vector<std::string> names;
        for (auto& [name, t] : model.params.by_name) {
            leaves.push_back(t);
            names.push_back(name);
        }
        auto f = [&model, &names, &input, &target](TapeD& tp, std::vector<TensorD>& v) {
            for (std::size_t i = 0; i < v.size(); ++i) model.params.at(names[i]) = v[i];
            TensorD logits = model.forward(tp, input);
            return dice_ce_loss(tp, logits, target);
        };
        check(std::string("network_loss_") + to_string(placement), tol_comp, 1e-4, f, leaves);
    }

    // full tiny MAE reconstruction loss
    {
        NetworkConfig cfg;
        cfg.stages = 2;
        cfg.base_channels = 2;
        cfg.blocks_per_stage = 1;
        cfg.patch_dims = {4, 4, 4};
        ModelT<double> model = ModelT<double>::build(cfg, ModelKind::mae, 2025);
        Rng rng(83, 0);
        TensorD input = smooth_point(Shape{1, 2, 4, 4, 4}, rng);
        TensorD mask(Shape{1, 2, 4, 4, 4});
        for (std::size_t i = 0; i < mask.mut().size(); ++i) mask.mut()[i] = (i % 2 == 0) ? 1.0 : 0.0;
        std::vector<TensorD> leaves;
        std::vector<std::string> names;
        for (auto& [name, t] : model.params.by_name) {
            leaves.push_back(t);
            names.push_back(name);
        }
        auto f = [&model, &names, &input, &mask](TapeD& tp, std::vector<TensorD>& v) {
            for (std::size_t i = 0; i < v.size(); ++i) model.params.at(names[i]) = v[i];
            TensorD recon = model.forward(tp, input);
            return mae_loss(tp, recon, input, mask);
        };
        check("mae_network_loss", tol_comp, 1e-4, f, leaves);
    }

    return result;
}

}  // namespace vxls
