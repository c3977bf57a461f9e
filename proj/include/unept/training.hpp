#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "boundary.hpp"
#include "labels.hpp"
#include "tensor.hpp"

// Loss assembly, optimizer, learning-rate schedule and segmentation metrics.

namespace unept {

struct LossWeights {
    double coarse = 1.0;
    double refined = 1.5;
    double boundary = 3.0;
    double direction = 0.7;
};

namespace detail {

inline void check_labels(const Tensor& logits, const LabelMap& labels, const char* op) {
    if (logits.rank() != 3 || logits.dim(1) != labels.height || logits.dim(2) != labels.width)
        throw std::invalid_argument(std::string(op) + ": logits/labels shape mismatch");
    for (std::int32_t v : labels.values)
        if (v != LabelMap::kIgnore && v >= logits.dim(0))
            throw std::invalid_argument(std::string(op) + ": label id exceeds class count");
}

}  // namespace detail

/// Mean per-pixel cross entropy of logits[K x H x W] against integer labels,
/// ignore pixels excluded. Fused log-softmax forward and (softmax - onehot)
/// backward. An all-ignore map contributes exactly zero.
inline Tensor cross_entropy_mean(const Tensor& logits, const LabelMap& labels) {
    detail::check_labels(logits, labels, "cross_entropy_mean");
    int k = logits.dim(0);
    std::size_t hw = labels.size();
    const auto& lv = logits.value();
    double total = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < hw; ++i) {
        std::int32_t y = labels.values[i];
        if (y == LabelMap::kIgnore) continue;
        double mx = lv[i];
        for (int c = 1; c < k; ++c) mx = std::max(mx, lv[static_cast<std::size_t>(c) * hw + i]);
        double lse = 0.0;
        for (int c = 0; c < k; ++c) lse += std::exp(lv[static_cast<std::size_t>(c) * hw + i] - mx);
        lse = std::log(lse) + mx;
        total += lse - lv[static_cast<std::size_t>(y) * hw + i];
        ++count;
    }
    double mean = count > 0 ? total / static_cast<double>(count) : 0.0;
    auto target = labels.values;  // by value: the closure must outlive the caller's map
    return Tensor::from_op(
        "cross_entropy_mean", {}, {mean}, {logits},
        [k, hw, count, target = std::move(target)](detail::Node& nd) {
            if (count == 0) return;
            if (auto* g = detail::parent_grad(nd, 0)) {
                const auto& lv = detail::parent_value(nd, 0);
                double gy = nd.grad[0] / static_cast<double>(count);
                for (std::size_t i = 0; i < hw; ++i) {
                    std::int32_t y = target[i];
                    if (y == LabelMap::kIgnore) continue;
                    double mx = lv[i];
                    for (int c = 1; c < k; ++c) mx = std::max(mx, lv[static_cast<std::size_t>(c) * hw + i]);
                    double denom = 0.0;
                    for (int c = 0; c < k; ++c) denom += std::exp(lv[static_cast<std::size_t>(c) * hw + i] - mx);
                    for (int c = 0; c < k; ++c) {
                        double p = std::exp(lv[static_cast<std::size_t>(c) * hw + i] - mx) / denom;
                        (*g)[static_cast<std::size_t>(c) * hw + i] += gy * (p - (c == y ? 1.0 : 0.0));
                    }
                }
            }
        });
}

/// Mean binary cross entropy (with logits, stable log-sum-exp form) of the
/// boundary head against the 0/1 boundary band; ignore pixels excluded.
inline Tensor boundary_bce_mean(const Tensor& logits, const BoundaryTargets& targets,
                                const LabelMap& labels) {
    if (logits.rank() != 3 || logits.dim(0) != 1 || logits.dim(1) != targets.height ||
        logits.dim(2) != targets.width)
        throw std::invalid_argument("boundary_bce_mean: logits must be 1 x H x W");
    std::size_t hw = targets.size();
    const auto& lv = logits.value();
    double total = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < hw; ++i) {
        if (labels.values[i] == LabelMap::kIgnore) continue;
        double z = lv[i];
        double t = targets.boundary[i] ? 1.0 : 0.0;
        total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        ++count;
    }
    double mean = count > 0 ? total / static_cast<double>(count) : 0.0;
    std::vector<std::uint8_t> tgt = targets.boundary;
    std::vector<std::int32_t> lab = labels.values;
    return Tensor::from_op(
        "boundary_bce_mean", {}, {mean}, {logits},
        [hw, count, tgt = std::move(tgt), lab = std::move(lab)](detail::Node& nd) {
            if (count == 0) return;
            if (auto* g = detail::parent_grad(nd, 0)) {
                const auto& lv = detail::parent_value(nd, 0);
                double gy = nd.grad[0] / static_cast<double>(count);
                for (std::size_t i = 0; i < hw; ++i) {
                    if (lab[i] == LabelMap::kIgnore) continue;
                    double s = 1.0 / (1.0 + std::exp(-lv[i]));
                    (*g)[i] += gy * (s - (tgt[i] ? 1.0 : 0.0));
                }
            }
        });
}

/// Mean cross entropy of the direction head over ground-truth boundary
/// pixels only; images without boundary pixels contribute zero.
inline Tensor direction_ce_mean(const Tensor& logits, const BoundaryTargets& targets,
                                const LabelMap& labels) {
    if (logits.rank() != 3 || logits.dim(1) != targets.height || logits.dim(2) != targets.width)
        throw std::invalid_argument("direction_ce_mean: logits must be m x H x W");
    int m = logits.dim(0);
    std::size_t hw = targets.size();
    const auto& lv = logits.value();
    double total = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < hw; ++i) {
        if (!targets.boundary[i] || labels.values[i] == LabelMap::kIgnore) continue;
        int y = targets.direction[i];
        double mx = lv[i];
        for (int c = 1; c < m; ++c) mx = std::max(mx, lv[static_cast<std::size_t>(c) * hw + i]);
        double lse = 0.0;
        for (int c = 0; c < m; ++c) lse += std::exp(lv[static_cast<std::size_t>(c) * hw + i] - mx);
        total += std::log(lse) + mx - lv[static_cast<std::size_t>(y) * hw + i];
        ++count;
    }
    double mean = count > 0 ? total / static_cast<double>(count) : 0.0;
    std::vector<std::uint8_t> bnd = targets.boundary;
    std::vector<std::int32_t> dir = targets.direction;
    std::vector<std::int32_t> lab = labels.values;
    return Tensor::from_op(
        "direction_ce_mean", {}, {mean}, {logits},
        [m, hw, count, bnd = std::move(bnd), dir = std::move(dir),
         lab = std::move(lab)](detail::Node& nd) {
            if (count == 0) return;
            if (auto* g = detail::parent_grad(nd, 0)) {
                const auto& lv = detail::parent_value(nd, 0);
                double gy = nd.grad[0] / static_cast<double>(count);
                for (std::size_t i = 0; i < hw; ++i) {
                    if (!bnd[i] || lab[i] == LabelMap::kIgnore) continue;
                    double mx = lv[i];
                    for (int c = 1; c < m; ++c) mx = std::max(mx, lv[static_cast<std::size_t>(c) * hw + i]);
                    double denom = 0.0;
                    for (int c = 0; c < m; ++c) denom += std::exp(lv[static_cast<std::size_t>(c) * hw + i] - mx);
                    for (int c = 0; c < m; ++c) {
                        double p = std::exp(lv[static_cast<std::size_t>(c) * hw + i] - mx) / denom;
                        (*g)[static_cast<std::size_t>(c) * hw + i] +=
                            gy * (p - (c == dir[i] ? 1.0 : 0.0));
                    }
                }
            }
        });
}

struct LossBreakdown {
    Tensor total;  // scalar, on tape
    double coarse = 0.0, refined = 0.0, boundary = 0.0, direction = 0.0;
};

/// Combined loss: w1*CE(coarse) + w2*CE(refined) + w3*BCE(boundary) +
/// w4*CE(direction over GT-boundary pixels).
inline LossBreakdown segmentation_loss(const Tensor& seg_logits, const Tensor& refined_logits,
                                       const Tensor& boundary_logits,
                                       const Tensor& direction_logits, const LabelMap& labels,
                                       const BoundaryTargets& targets, const LossWeights& w) {
    if (w.coarse < 0 || w.refined < 0 || w.boundary < 0 || w.direction < 0)
        throw std::invalid_argument("segmentation_loss: weights must be non-negative");
    LossBreakdown out;
    Tensor ce = cross_entropy_mean(seg_logits, labels);
    Tensor ce_ref = cross_entropy_mean(refined_logits, labels);
    Tensor bce = boundary_bce_mean(boundary_logits, targets, labels);
    Tensor dir = direction_ce_mean(direction_logits, targets, labels);
    out.coarse = ce.item();
    out.refined = ce_ref.item();
    out.boundary = bce.item();
    out.direction = dir.item();
    out.total = add(add(scale(ce, w.coarse), scale(ce_ref, w.refined)),
                    add(scale(bce, w.boundary), scale(dir, w.direction)));
    return out;
}

// ---------------------------------------------------------------------------
// optimizer and schedule

/// Step-function schedule: base_lr until 2/3 of training, 0.1 * base_lr from
/// there on (boundary step inclusive).
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr) {
    if (step < 0 || total_steps < 0 || step > total_steps)
        throw std::invalid_argument("lr_schedule: step out of range");
    std::int64_t drop = (2 * total_steps + 2) / 3;  // ceil(2t/3)
    return step >= drop ? base_lr * 0.1 : base_lr;
}

/// AdamW with decoupled weight decay. Parameters whose name carries the
/// backbone prefix step with their own (lower) learning rate.
class AdamW {
public:
    struct Hyper {
        double lr = 1e-4;
        double backbone_lr = 1e-5;
        double weight_decay = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW() = default;
    AdamW(NamedParams params, Hyper hyper, std::string backbone_prefix = "backbone.")
        : params_(std::move(params)), hyper_(hyper), backbone_prefix_(std::move(backbone_prefix)) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].second.numel(), 0.0);
            v_[i].assign(params_[i].second.numel(), 0.0);
        }
    }

    const Hyper& hyper() const { return hyper_; }
    std::int64_t step_count() const { return step_; }
    const NamedParams& params() const { return params_; }

    /// One update from the accumulated gradients; lr_factor applies the
    /// schedule to both parameter groups. Gradients are consumed (zeroed).
    void step(double lr_factor = 1.0) {
        ++step_;
        double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].second;
            bool is_backbone = params_[i].first.rfind(backbone_prefix_, 0) == 0;
            double lr = (is_backbone ? hyper_.backbone_lr : hyper_.lr) * lr_factor;
            auto& value = p.value_mut();
            const double* grad = nullptr;
            if (p.has_grad()) grad = p.grad().data();
            for (std::size_t j = 0; j < value.size(); ++j) {
                double g = grad ? grad[j] : 0.0;
                // decoupled decay first, then the bias-corrected moment update
                value[j] -= lr * hyper_.weight_decay * value[j];
                m_[i][j] = hyper_.beta1 * m_[i][j] + (1.0 - hyper_.beta1) * g;
                v_[i][j] = hyper_.beta2 * v_[i][j] + (1.0 - hyper_.beta2) * g * g;
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                value[j] -= lr * mhat / (std::sqrt(vhat) + hyper_.eps);
            }
            if (p.has_grad()) p.zero_grad();
        }
    }

    // checkpoint access
    std::vector<std::vector<double>>& moment1() { return m_; }
    std::vector<std::vector<double>>& moment2() { return v_; }
    void set_step_count(std::int64_t s) { step_ = s; }

private:
    NamedParams params_;
    Hyper hyper_;
    std::string backbone_prefix_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// metrics

/// K x K counts with entry (i, j) = pixels where gt == i and pred == j;
/// ignore pixels are skipped.
inline std::vector<std::int64_t> confusion_matrix(const LabelMap& pred, const LabelMap& gt,
                                                  int num_classes) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("confusion_matrix: shape mismatch");
    std::vector<std::int64_t> cm(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        std::int32_t g = gt.values[i];
        if (g == LabelMap::kIgnore) continue;
        std::int32_t p = pred.values[i];
        if (g >= num_classes || p >= num_classes || p < 0 || g < 0)
            throw std::invalid_argument("confusion_matrix: label id exceeds class count");
        ++cm[static_cast<std::size_t>(g) * num_classes + p];
    }
    return cm;
}

inline void accumulate_confusion(std::vector<std::int64_t>& into,
                                 const std::vector<std::int64_t>& cm) {
    if (into.empty()) {
        into = cm;
        return;
    }
    if (into.size() != cm.size())
        throw std::invalid_argument("accumulate_confusion: size mismatch");
    for (std::size_t i = 0; i < cm.size(); ++i) into[i] += cm[i];
}

struct Metrics {
    double miou = 0.0;
    double pixacc = 0.0;
};

/// mIoU over classes present in the ground truth plus overall pixel
/// accuracy. An empty matrix (no counted pixels) is an error.
inline Metrics metrics(const std::vector<std::int64_t>& cm, int num_classes) {
    if (cm.size() != static_cast<std::size_t>(num_classes) * num_classes)
        throw std::invalid_argument("metrics: matrix size mismatch");
    std::int64_t total = 0, diag = 0;
    for (int i = 0; i < num_classes; ++i)
        for (int j = 0; j < num_classes; ++j) {
            std::int64_t c = cm[static_cast<std::size_t>(i) * num_classes + j];
            if (c < 0) throw std::invalid_argument("metrics: negative count");
            total += c;
            if (i == j) diag += c;
        }
    if (total == 0) throw std::domain_error("metrics: empty confusion matrix");
    double iou_sum = 0.0;
    int present = 0;
    for (int k = 0; k < num_classes; ++k) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < num_classes; ++j) {
            row += cm[static_cast<std::size_t>(k) * num_classes + j];
            col += cm[static_cast<std::size_t>(j) * num_classes + k];
        }
        if (row == 0) continue;  // class absent from gt
        std::int64_t inter = cm[static_cast<std::size_t>(k) * num_classes + k];
        iou_sum += static_cast<double>(inter) / static_cast<double>(row + col - inter);
        ++present;
    }
    Metrics m;
    m.miou = present > 0 ? iou_sum / present : 0.0;
    m.pixacc = static_cast<double>(diag) / static_cast<double>(total);
    return m;
}

}  // namespace unept
