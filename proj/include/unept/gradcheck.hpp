#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

// Central finite-difference verification of reverse-mode gradients.
// loss functions passed here must rebuild their graph from the current leaf
// values on every call.

namespace unept {

/// Relative error with an absolute guard on the difference: a central
/// difference of an O(1..10) loss at h=1e-5 carries ~1e-10..1e-8 of rounding
/// noise, so disagreements below 1e-7 are below measurability and count as
/// agreement. Real backward bugs on any gradient that matters are orders of
/// magnitude larger.
inline double grad_rel_err(double analytic, double numeric) {
    double diff = std::abs(analytic - numeric);
    if (diff < 1e-7) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
};

/// Checks d(loss)/d(param) for every element of every listed parameter
/// against central differences with step h. Returns one entry per parameter
/// group, in input order.
inline std::vector<GradCheckGroup> gradcheck_params(
    const std::function<Tensor()>& loss_fn,
    std::vector<std::pair<std::string, Tensor>> params, double h = 1e-5) {
    // One analytic sweep for all groups.
    for (auto& [name, p] : params) {
        p.set_requires_grad(true);
        if (p.has_grad()) p.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);

    std::vector<GradCheckGroup> report;
    report.reserve(params.size());
    for (auto& [name, p] : params) {
        std::vector<double> analytic =
            p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
        GradCheckGroup group{name, 0.0};
        auto& v = p.value_mut();
        for (std::size_t i = 0; i < v.size(); ++i) {
            double keep = v[i];
            double fp, fm;
            {
                NoGradGuard ng;
                v[i] = keep + h;
                fp = loss_fn().item();
                v[i] = keep - h;
                fm = loss_fn().item();
            }
            v[i] = keep;
            double fd = (fp - fm) / (2.0 * h);
            group.max_rel_err = std::max(group.max_rel_err, grad_rel_err(analytic[i], fd));
        }
        if (p.has_grad()) p.zero_grad();
        report.push_back(std::move(group));
    }
    return report;
}

inline double gradcheck_worst(const std::vector<GradCheckGroup>& report) {
    double worst = 0.0;
    for (const auto& g : report) worst = std::max(worst, g.max_rel_err);
    return worst;
}

}  // namespace unept
