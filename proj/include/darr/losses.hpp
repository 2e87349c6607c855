#pragma once

#include <cmath>
#include <vector>

#include "darr/networks.hpp"
#include "darr/nn/tensor.hpp"
#include "darr/volume.hpp"

namespace darr {

struct LossWeights {
    double lambda_sr = 30.0;
    double lambda_p = 0.1;

    void validate() const {
        require<ConfigError>(lambda_sr >= 0.0 && lambda_p >= 0.0,
                             "LossWeights: weights must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
    j = {{"lambda_sr", w.lambda_sr}, {"lambda_p", w.lambda_p}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
    w.lambda_sr = j.value("lambda_sr", 30.0);
    w.lambda_p = j.value("lambda_p", 0.1);
}

// ---------------------------------------------------------------------------
// The three loss terms. Each has a value-only form and a fused value+gradient
// form; gradients are scaled by `scale` so callers can fold in loss weights
// and per-patch averaging.
// ---------------------------------------------------------------------------

/// Mean squared error over voxels.
template <class T>
inline T sr_loss(const nn::Feat<T>& predicted, const nn::Feat<T>& original) {
    require<ShapeError>(predicted.same_geometry(original), "sr_loss: shape mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < predicted.v.size(); ++i) {
        const T d = predicted.v[i] - original.v[i];
        acc += d * d;
    }
    return acc / static_cast<T>(predicted.v.size());
}

template <class T>
inline T sr_loss_grad(const nn::Feat<T>& predicted, const nn::Feat<T>& original, T scale,
                      nn::Feat<T>& grad) {
    require<ShapeError>(predicted.same_geometry(original), "sr_loss: shape mismatch");
    grad = nn::Feat<T>(predicted.channels, predicted.shape);
    T acc = 0;
    const T gs = T(2) * scale / static_cast<T>(predicted.v.size());
    for (std::size_t i = 0; i < predicted.v.size(); ++i) {
        const T d = predicted.v[i] - original.v[i];
        acc += d * d;
        grad.v[i] = gs * d;
    }
    return acc / static_cast<T>(predicted.v.size());
}

/// Mean per-voxel cross entropy from raw logits (channels = classes).
template <class T>
inline T seg_loss_grad(const nn::Feat<T>& logits, const SegmentationMask& mask, T scale,
                       nn::Feat<T>& grad, bool want_grad = true) {
    require<ShapeError>(logits.shape == mask.shape, "seg_loss: logits/mask shape mismatch");
    const int classes = logits.channels;
    const i64 n = logits.voxels();
    if (want_grad) grad = nn::Feat<T>(classes, logits.shape);
    T total = 0;
    std::vector<T> probs(static_cast<std::size_t>(classes));
    for (i64 i = 0; i < n; ++i) {
        const u16 gt = mask.labels[static_cast<std::size_t>(i)];
        require<DomainError>(gt < classes, "seg_loss: label out of range");
        T mx = logits.v[static_cast<std::size_t>(i)];
        for (int c = 1; c < classes; ++c)
            mx = std::max(mx, logits.v[static_cast<std::size_t>(c) * n + i]);
        T sum = 0;
        for (int c = 0; c < classes; ++c) {
            probs[static_cast<std::size_t>(c)] =
                std::exp(logits.v[static_cast<std::size_t>(c) * n + i] - mx);
            sum += probs[static_cast<std::size_t>(c)];
        }
        total += std::log(sum) - (logits.v[static_cast<std::size_t>(gt) * n + i] - mx);
        if (want_grad) {
            const T gs = scale / static_cast<T>(n);
            for (int c = 0; c < classes; ++c) {
                T p = probs[static_cast<std::size_t>(c)] / sum;
                if (c == gt) p -= T(1);
                grad.v[static_cast<std::size_t>(c) * n + i] = gs * p;
            }
        }
    }
    return total / static_cast<T>(n);
}

template <class T>
inline T seg_loss(const nn::Feat<T>& logits, const SegmentationMask& mask) {
    nn::Feat<T> unused;
    return seg_loss_grad(logits, mask, T(0), unused, /*want_grad=*/false);
}

/// Negative log-likelihood of each patch's true location under the
/// row-stochastic prediction: -(1/n) sum_a log P[a, l_a].
template <class T>
inline T puzzle_loss(const std::vector<T>& prob_matrix, const std::vector<i64>& permuted_labels) {
    const int n = static_cast<int>(permuted_labels.size());
    require<ShapeError>(prob_matrix.size() == static_cast<std::size_t>(n) * n,
                        "puzzle_loss: matrix must be n x n");
    {
        Permutation check;
        check.order = permuted_labels;
        check.validate();
    }
    for (int a = 0; a < n; ++a) {
        T row_sum = 0;
        for (int j = 0; j < n; ++j) row_sum += prob_matrix[static_cast<std::size_t>(a) * n + j];
        require<DomainError>(std::abs(static_cast<double>(row_sum) - 1.0) <= 1e-4,
                             "puzzle_loss: row " + std::to_string(a) + " is not a distribution");
    }
    T total = 0;
    for (int a = 0; a < n; ++a)
        total -= std::log(prob_matrix[static_cast<std::size_t>(a) * n +
                                      static_cast<std::size_t>(permuted_labels[a])]);
    return total / static_cast<T>(n);
}

/// Fused softmax+NLL gradient w.r.t. pre-softmax scores: (P - onehot) * scale/n.
template <class T>
inline std::vector<T> puzzle_score_grad(const std::vector<T>& prob_matrix,
                                        const std::vector<i64>& permuted_labels, T scale) {
    const int n = static_cast<int>(permuted_labels.size());
    std::vector<T> g(prob_matrix.size());
    const T gs = scale / static_cast<T>(n);
    for (int a = 0; a < n; ++a)
        for (int j = 0; j < n; ++j) {
            T v = prob_matrix[static_cast<std::size_t>(a) * n + j];
            if (j == permuted_labels[static_cast<std::size_t>(a)]) v -= T(1);
            g[static_cast<std::size_t>(a) * n + j] = gs * v;
        }
    return g;
}

// ---------------------------------------------------------------------------
// One training example: a full permuted puzzle with per-patch targets.
// ---------------------------------------------------------------------------
template <class T>
struct PuzzleBatch {
    std::vector<nn::Feat<T>> hires;   // permuted order, 1-channel, grid patch shape
    std::vector<nn::Feat<T>> lowres;  // squeezed companions
    std::vector<SegmentationMask> masks;  // empty for label-free batches
    std::vector<i64> labels;              // l_a

    int n() const { return static_cast<int>(labels.size()); }
    bool has_masks() const { return !masks.empty(); }
};

/// Builds the supervised batch: resample to grid geometry, partition, permute,
/// squeeze. Masks travel with their patches.
template <class T>
inline PuzzleBatch<T> make_puzzle_batch(const Volume& vol, const SegmentationMask& mask,
                                        const PatchGrid& grid, int squeeze_factor,
                                        const Permutation& perm) {
    auto patches = apply_permutation(partition_volume(vol, grid), perm);
    auto mask_patches = apply_permutation(partition_mask(mask, grid), perm);
    PuzzleBatch<T> b;
    for (i64 a = 0; a < grid.cells(); ++a) {
        const auto& p = patches[static_cast<std::size_t>(a)];
        b.hires.push_back(nn::from_values<T>(p.values, p.shape));
        b.lowres.push_back(nn::from_values<T>(squeeze_axial_values(p.values, p.shape, squeeze_factor),
                                              {p.shape.x, p.shape.y, p.shape.z / squeeze_factor}));
        b.labels.push_back(p.label);
        b.masks.push_back(mask_patches[static_cast<std::size_t>(a)]);
    }
    return b;
}

/// Label-free batch for test-time adaptation; no mask ever enters this path.
template <class T>
inline PuzzleBatch<T> make_adapt_batch(const Volume& vol, const PatchGrid& grid,
                                       int squeeze_factor, const Permutation& perm) {
    auto patches = apply_permutation(partition_volume(vol, grid), perm);
    PuzzleBatch<T> b;
    for (i64 a = 0; a < grid.cells(); ++a) {
        const auto& p = patches[static_cast<std::size_t>(a)];
        b.hires.push_back(nn::from_values<T>(p.values, p.shape));
        b.lowres.push_back(nn::from_values<T>(squeeze_axial_values(p.values, p.shape, squeeze_factor),
                                              {p.shape.x, p.shape.y, p.shape.z / squeeze_factor}));
        b.labels.push_back(p.label);
    }
    return b;
}

struct LossBreakdown {
    double seg = 0.0;
    double sr = 0.0;
    double puzzle = 0.0;
    double total = 0.0;

    bool finite() const {
        return std::isfinite(seg) && std::isfinite(sr) && std::isfinite(puzzle) &&
               std::isfinite(total);
    }
};

// ---------------------------------------------------------------------------
// Joint forward/backward over one puzzle. Each patch runs on its own model
// replica so patches can execute in parallel; gradients reduce in patch order,
// making the result independent of the worker count. The puzzle head runs on
// the master model only.
// ---------------------------------------------------------------------------
template <class T>
class JointContext {
public:
    JointContext(DarrModel<T>& master, int workers)
        : master_(&master), workers_(std::max(1, workers)) {
        replicas_.assign(static_cast<std::size_t>(master.n_cells), master);
    }

    DarrModel<T>& master() { return *master_; }

    /// Joint objective: seg + lambda_sr*sr + lambda_p*puzzle, gradients for all
    /// four groups accumulated into the master model.
    LossBreakdown train_step_grads(const PuzzleBatch<T>& batch, const LossWeights& weights) {
        require<DomainError>(batch.has_masks(), "train step requires mask patches");
        return run(batch, &weights, /*seg_sr=*/true, /*want_grads=*/true);
    }

    /// Puzzle-term-only gradients (test-time adaptation); decoder untouched.
    LossBreakdown puzzle_step_grads(const PuzzleBatch<T>& batch) {
        return run(batch, nullptr, /*seg_sr=*/false, /*want_grads=*/true);
    }

    /// Loss evaluation without touching any gradient or parameter.
    LossBreakdown eval_losses(const PuzzleBatch<T>& batch, const LossWeights& weights) {
        return run(batch, &weights, batch.has_masks(), /*want_grads=*/false);
    }

private:
    LossBreakdown run(const PuzzleBatch<T>& batch, const LossWeights* weights, bool seg_sr,
                      bool want_grads) {
        const int n = batch.n();
        require<ShapeError>(n == master_->n_cells,
                            "JointContext: batch has " + std::to_string(n) + " patches, model has " +
                                std::to_string(master_->n_cells) + " cells");
        const bool use_puzzle = master_->cfg.use_puzzle;
        const bool use_sr = master_->cfg.use_sr;
        const T lam_sr = weights ? static_cast<T>(weights->lambda_sr) : T(0);
        const T lam_p = weights ? static_cast<T>(weights->lambda_p) : T(1);

        std::vector<double> seg_terms(static_cast<std::size_t>(n), 0.0);
        std::vector<double> sr_terms(static_cast<std::size_t>(n), 0.0);
        std::vector<std::vector<T>> pooled(static_cast<std::size_t>(n));
        std::vector<nn::Feat<T>> dlogits(static_cast<std::size_t>(n));
        std::vector<nn::Feat<T>> dsr_mse(static_cast<std::size_t>(n));

        // Phase A: per-patch forward (and per-patch loss gradients).
        parallel_for(n, workers_, [&](i64 a) {
            auto& r = replicas_[static_cast<std::size_t>(a)];
            r.copy_params_from(*master_);
            if (want_grads) r.zero_all_grads();
            const auto& lo = batch.lowres[static_cast<std::size_t>(a)];
            const auto& hi = batch.hires[static_cast<std::size_t>(a)];
            nn::Feat<T> sr_out = r.standardize_forward(lo);
            if (seg_sr && use_sr) {
                if (want_grads)
                    sr_terms[static_cast<std::size_t>(a)] = static_cast<double>(sr_loss_grad(
                        sr_out, hi, lam_sr / static_cast<T>(n), dsr_mse[static_cast<std::size_t>(a)]));
                else
                    sr_terms[static_cast<std::size_t>(a)] = static_cast<double>(sr_loss(sr_out, hi));
            }
            nn::Feat<T> feat = r.encoder.forward(sr_out);
            if (seg_sr) {
                nn::Feat<T> logits = r.decoder.forward(feat, r.encoder.skips_);
                if (want_grads)
                    seg_terms[static_cast<std::size_t>(a)] = static_cast<double>(
                        seg_loss_grad(logits, batch.masks[static_cast<std::size_t>(a)],
                                      T(1) / static_cast<T>(n), dlogits[static_cast<std::size_t>(a)]));
                else
                    seg_terms[static_cast<std::size_t>(a)] = static_cast<double>(
                        seg_loss(logits, batch.masks[static_cast<std::size_t>(a)]));
            }
            if (use_puzzle)
                pooled[static_cast<std::size_t>(a)] =
                    master_->cfg.puzzle_raw_flatten
                        ? std::vector<T>(feat.v.begin(), feat.v.end())
                        : nn::gap_forward(feat);
        });

        // Phase B: puzzle head on the master (serial; needs every patch).
        LossBreakdown out;
        std::vector<std::vector<T>> dpooled(static_cast<std::size_t>(n));
        if (use_puzzle) {
            std::vector<T> concat;
            concat.reserve(static_cast<std::size_t>(n) * pooled[0].size());
            for (const auto& v : pooled) concat.insert(concat.end(), v.begin(), v.end());
            const std::vector<T> probs = master_->puzzle.forward(concat);
            out.puzzle = static_cast<double>(puzzle_loss(probs, batch.labels));
            if (want_grads) {
                const std::vector<T> gscores = puzzle_score_grad(probs, batch.labels, lam_p);
                const std::vector<T> gconcat = master_->puzzle.backward_scores(gscores);
                const std::size_t per = pooled[0].size();
                for (int a = 0; a < n; ++a)
                    dpooled[static_cast<std::size_t>(a)] =
                        std::vector<T>(gconcat.begin() + static_cast<std::ptrdiff_t>(a * per),
                                       gconcat.begin() + static_cast<std::ptrdiff_t>((a + 1) * per));
            }
        }

        // Phase C: per-patch backward.
        if (want_grads) {
            parallel_for(n, workers_, [&](i64 a) {
                auto& r = replicas_[static_cast<std::size_t>(a)];
                nn::Feat<T> dfeat;
                std::vector<nn::Feat<T>> dskips;
                bool have_feat_grad = false;
                if (seg_sr) {
                    dfeat = r.decoder.backward(dlogits[static_cast<std::size_t>(a)], dskips);
                    have_feat_grad = true;
                }
                if (use_puzzle) {
                    const nn::Feat<T>& feat_ref = last_feat(r);
                    nn::Feat<T> dpuz;
                    if (master_->cfg.puzzle_raw_flatten) {
                        dpuz = nn::Feat<T>(feat_ref.channels, feat_ref.shape);
                        dpuz.v = dpooled[static_cast<std::size_t>(a)];
                    } else {
                        dpuz = nn::gap_backward(dpooled[static_cast<std::size_t>(a)],
                                                feat_ref.channels, feat_ref.shape);
                    }
                    if (have_feat_grad) nn::add_into(dfeat, dpuz);
                    else dfeat = std::move(dpuz);
                    have_feat_grad = true;
                }
                if (!have_feat_grad) return;
                nn::Feat<T> dsr = r.encoder.backward(dfeat, seg_sr ? &dskips : nullptr);
                if (seg_sr && use_sr && dsr_mse[static_cast<std::size_t>(a)].size() > 0)
                    nn::add_into(dsr, dsr_mse[static_cast<std::size_t>(a)]);
                r.standardize_backward(dsr);
            });

            // Phase D: deterministic reduction in patch order.
            auto mparams = master_->all_params();
            for (int a = 0; a < n; ++a) {
                auto rparams = replicas_[static_cast<std::size_t>(a)].all_params();
                for (std::size_t i = 0; i < mparams.size(); ++i)
                    for (std::size_t k = 0; k < mparams[i]->g.size(); ++k)
                        mparams[i]->g[k] += rparams[i]->g[k];
            }
        }

        for (int a = 0; a < n; ++a) {
            out.seg += seg_terms[static_cast<std::size_t>(a)] / n;
            out.sr += sr_terms[static_cast<std::size_t>(a)] / n;
        }
        const double w_sr = weights ? weights->lambda_sr : 0.0;
        const double w_p = weights ? weights->lambda_p : 1.0;
        out.total = out.seg + w_sr * out.sr + w_p * out.puzzle;
        return out;
    }

    // The bottleneck activation replica `r` produced in phase A: the last
    // encoder stage's post-activation output.
    static const nn::Feat<T>& last_feat(DarrModel<T>& r) {
        return r.encoder.stages.back().act2.out_;
    }

    DarrModel<T>* master_;
    int workers_;
    std::vector<DarrModel<T>> replicas_;
};

}  // namespace darr
