#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vxls/tensor.hpp"

namespace vxls {

// Central finite-difference verification of reverse-mode gradients,
// evaluated in 64-bit. Returns max_i |g_ad - g_fd| / max(|g_ad|, |g_fd|,
// 1e-8) over every element of every leaf.
using GradcheckFn = std::function<TensorD(TapeD&, std::vector<TensorD>&)>;

inline double gradcheck(const GradcheckFn& f, std::vector<TensorD> leaves, double h = 1e-4) {
    TapeD tape;
    for (auto& l : leaves) tape.watch(l);
    TensorD y = f(tape, leaves);
    if (y.numel() != 1) throw NonScalarOutput("gradcheck: function output is not scalar");
    tape.backward(y);
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(tape.grad(l).data());

    auto eval = [&](std::vector<TensorD>& pts) {
        TapeD t2;
        for (auto& l : pts) {
            l.node = -1;
            l.requires_grad = false;
        }
        return f(t2, pts).scalar();
    };

    double worst = 0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (std::size_t i = 0; i < leaves[li].data().size(); ++i) {
            const double x0 = leaves[li].data()[i];
            leaves[li].mut()[i] = x0 + h;
            const double fp = eval(leaves);
            leaves[li].mut()[i] = x0 - h;
            const double fm = eval(leaves);
            leaves[li].mut()[i] = x0;
            const double fd = (fp - fm) / (2 * h);
            const double ad = analytic[li][i];
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// named checks that make up the `gradcheck` CLI / acceptance suite
struct GradSuiteEntry {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 0;
    bool passed = false;
};

struct GradSuiteResult {
    std::vector<GradSuiteEntry> entries;
    bool all_passed = true;
};

GradSuiteResult run_gradient_suite(bool verbose);

}  // namespace vxls
