#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "darr/evaluation.hpp"
#include "darr/losses.hpp"
#include "darr/networks.hpp"
#include "darr/nn/optim.hpp"

namespace darr {

struct AdaptConfig {
    i64 iterations = 30;
    double learning_rate = 1e-5;
    int permutations_per_iter = 1;
    u64 seed = 0;
    int workers = 0;

    void validate() const {
        require<ConfigError>(iterations >= 0, "AdaptConfig: iterations must be >= 0");
        require<ConfigError>(learning_rate >= 0, "AdaptConfig: learning_rate must be >= 0");
        require<ConfigError>(permutations_per_iter >= 1,
                             "AdaptConfig: permutations_per_iter must be >= 1");
    }

    int effective_workers() const { return workers > 0 ? workers : default_workers(); }
};

inline void to_json(nlohmann::json& j, const AdaptConfig& c) {
    j = {{"iterations", c.iterations},
         {"learning_rate", c.learning_rate},
         {"permutations_per_iter", c.permutations_per_iter},
         {"seed", c.seed},
         {"workers", c.workers}};
}
inline void from_json(const nlohmann::json& j, AdaptConfig& c) {
    const AdaptConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.permutations_per_iter = j.value("permutations_per_iter", d.permutations_per_iter);
    c.seed = j.value("seed", d.seed);
    c.workers = j.value("workers", d.workers);
}

struct AdaptTrace {
    bool ran = false;       // any step taken
    bool fallback = false;  // non-finite loss; original params restored
    std::vector<double> puzzle_curve;
};

/// Test-time jigsaw training on one unlabeled image: each iteration draws a
/// fresh permutation and takes one SGD step on the puzzle loss, updating
/// theta_sr, theta_en and theta_p only. The decoder is frozen by construction
/// (it is never part of the update set). No mask exists on this code path.
template <class T>
inline AdaptTrace adapt_to_image(DarrModel<T>& model, const Volume& target, const PatchGrid& grid,
                                 const AdaptConfig& cfg) {
    cfg.validate();
    grid.validate();
    require<ConfigError>(model.cfg.use_puzzle,
                         "adapt_to_image: model has no puzzle head to adapt with");
    require<ConfigError>(grid.cells() == model.n_cells && grid.patch_shape == model.patch_shape,
                         "adapt_to_image: grid does not match the model");
    AdaptTrace trace;
    if (cfg.iterations == 0) return trace;

    const ParamSnapshot<T> entry = snapshot(model);
    const Volume resampled = resample_trilinear(target, grid.full_shape());
    JointContext<T> ctx(model, cfg.effective_workers());
    nn::Sgd<T> sgd(static_cast<T>(cfg.learning_rate));
    auto update_set = model.adapt_params();
    Rng rng(derive_seed(cfg.seed, 0xadab));

    for (i64 iter = 0; iter < cfg.iterations; ++iter) {
        nn::zero_grads(model.all_params());
        double loss_acc = 0;
        for (int p = 0; p < cfg.permutations_per_iter; ++p) {
            const Permutation perm = sample_permutation(grid.cells(), rng);
            const PuzzleBatch<T> batch = make_adapt_batch<T>(
                resampled, grid, model.cfg.sr_factor, perm);
            loss_acc += ctx.puzzle_step_grads(batch).puzzle / cfg.permutations_per_iter;
        }
        if (!std::isfinite(loss_acc)) {
            restore(model, entry);
            trace.fallback = true;
            return trace;
        }
        sgd.step(update_set);
        trace.puzzle_curve.push_back(loss_acc);
        trace.ran = true;
    }
    return trace;
}

/// Mean puzzle loss over a fixed seeded panel of permutations; used to compare
/// before/after adaptation on equal footing.
template <class T>
inline double puzzle_loss_panel(DarrModel<T>& model, const Volume& target, const PatchGrid& grid,
                                int panel_size, u64 seed, int workers = 0) {
    require<ConfigError>(model.cfg.use_puzzle, "puzzle_loss_panel: model has no puzzle head");
    const Volume resampled = resample_trilinear(target, grid.full_shape());
    JointContext<T> ctx(model, workers > 0 ? workers : default_workers());
    Rng rng(derive_seed(seed, 0x9a41));
    LossWeights w;
    double acc = 0;
    for (int i = 0; i < panel_size; ++i) {
        const Permutation perm = sample_permutation(grid.cells(), rng);
        acc += ctx.eval_losses(make_adapt_batch<T>(resampled, grid, model.cfg.sr_factor, perm), w)
                   .puzzle;
    }
    return acc / panel_size;
}

/// Frozen forward pass through the segmentation branch: squeeze -> SR (or the
/// fixed upsample) -> encoder -> decoder -> argmax, patches placed by label.
template <class T>
inline SegmentationMask predict_case(DarrModel<T>& model, const Volume& target,
                                     const PatchGrid& grid) {
    grid.validate();
    require<ConfigError>(grid.cells() == model.n_cells && grid.patch_shape == model.patch_shape,
                         "predict_case: grid does not match the model");
    const auto patches = partition_volume(target, grid);
    SegmentationMask out(grid.full_shape(), model.cfg.num_classes);
    const Vec3i ps = grid.patch_shape;
    for (const auto& p : patches) {
        nn::Feat<T> lowres = nn::from_values<T>(
            squeeze_axial_values(p.values, p.shape, model.cfg.sr_factor),
            {p.shape.x, p.shape.y, p.shape.z / model.cfg.sr_factor});
        nn::Feat<T> feat = model.encoder.forward(model.standardize_forward(lowres));
        nn::Feat<T> logits = model.decoder.forward(feat, model.encoder.skips_);
        const i64 cx = p.label % grid.w;
        const i64 cy = (p.label / grid.w) % grid.h;
        const i64 cz = p.label / (static_cast<i64>(grid.w) * grid.h);
        const i64 n = logits.voxels();
        for (i64 z = 0; z < ps.z; ++z)
            for (i64 y = 0; y < ps.y; ++y)
                for (i64 x = 0; x < ps.x; ++x) {
                    const i64 i = (z * ps.y + y) * ps.x + x;
                    int best = 0;
                    T best_v = logits.v[static_cast<std::size_t>(i)];
                    for (int c = 1; c < logits.channels; ++c) {
                        const T v = logits.v[static_cast<std::size_t>(c) * n + i];
                        if (v > best_v) {
                            best_v = v;
                            best = c;
                        }
                    }
                    out.at(cx * ps.x + x, cy * ps.y + y, cz * ps.z + z) = static_cast<u16>(best);
                }
    }
    return out;
}

struct PredictionOutcome {
    SegmentationMask mask;
    bool adapted = false;
    bool fallback = false;
    std::vector<double> adapt_curve;
};

/// snapshot -> adapt_to_image -> frozen forward pass -> restore snapshot.
/// The caller's parameters are bitwise identical before and after.
template <class T>
inline PredictionOutcome predict_with_adaptation(DarrModel<T>& model, const Volume& target,
                                                 const PatchGrid& grid, const AdaptConfig& cfg) {
    PredictionOutcome out;
    const bool adapt = cfg.iterations > 0 && model.cfg.use_puzzle;
    if (!adapt) {
        out.mask = predict_case(model, target, grid);
        return out;
    }
    const ParamSnapshot<T> snap = snapshot(model);
    AdaptTrace trace = adapt_to_image(model, target, grid, cfg);
    out.adapted = trace.ran && !trace.fallback;
    out.fallback = trace.fallback;
    out.adapt_curve = std::move(trace.puzzle_curve);
    out.mask = predict_case(model, target, grid);
    restore(model, snap);
    return out;
}

// ---------------------------------------------------------------------------
// Ablation harness: lower bound / puzzle-only / SR-only / full DARR, all on
// identical case lists. Which variants run depends on which models are given.
// ---------------------------------------------------------------------------

inline constexpr const char* kVariantLowerBound = "lower_bound";
inline constexpr const char* kVariantPuzzle = "vnet_puzzle";
inline constexpr const char* kVariantSr = "vnet_sr";
inline constexpr const char* kVariantDarr = "darr";

template <class T>
struct VariantModel {
    std::string name;
    DarrModel<T>* model = nullptr;
    bool adapt = false;  // test-time puzzle training for this variant
};

/// Per-case, per-organ DSC for every variant. DSC is computed on the grid
/// geometry against the nearest-resampled ground truth. Adapted variants also
/// record the fixed-panel puzzle loss before and after adaptation.
template <class T>
inline ExperimentReport evaluate_variants(
    std::vector<VariantModel<T>> variants, std::span<const CaseData> targets,
    std::span<const std::string> case_ids, const PatchGrid& grid, const AdaptConfig& adapt_cfg,
    int puzzle_panel = 8, std::vector<std::vector<SegmentationMask>>* predicted_masks = nullptr) {
    require<ConfigError>(!variants.empty(), "evaluate_variants: no variants given");
    require<ConfigError>(!targets.empty(), "evaluate_variants: no target cases");
    for (const auto& v : variants)
        require<ConfigError>(v.model != nullptr,
                             "evaluate_variants: missing model for variant " + v.name);
    ExperimentReport report;
    if (predicted_masks) predicted_masks->clear();
    for (auto& v : variants) {
        VariantResult vr;
        vr.variant = v.name;
        std::vector<SegmentationMask> variant_masks;
        const int organs = v.model->cfg.num_classes - 1;
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const CaseData& tc = targets[i];
            CaseResult cr;
            cr.case_id = i < case_ids.size() ? case_ids[i] : ("case" + std::to_string(i));
            const u64 case_panel_seed = derive_seed(adapt_cfg.seed, fnv1a(cr.case_id.data(),
                                                                          cr.case_id.size()));
            SegmentationMask pred;
            if (v.adapt && v.model->cfg.use_puzzle && adapt_cfg.iterations > 0) {
                // snapshot -> measure -> adapt -> measure -> predict -> restore
                const ParamSnapshot<T> snap = snapshot(*v.model);
                cr.puzzle_loss_before = puzzle_loss_panel(*v.model, tc.volume, grid, puzzle_panel,
                                                          case_panel_seed, adapt_cfg.workers);
                AdaptTrace trace = adapt_to_image(*v.model, tc.volume, grid, adapt_cfg);
                cr.adapted = trace.ran && !trace.fallback;
                cr.fallback = trace.fallback;
                if (cr.adapted)
                    cr.puzzle_loss_after = puzzle_loss_panel(*v.model, tc.volume, grid, puzzle_panel,
                                                             case_panel_seed, adapt_cfg.workers);
                pred = predict_case(*v.model, tc.volume, grid);
                restore(*v.model, snap);
            } else {
                pred = predict_case(*v.model, tc.volume, grid);
            }
            const SegmentationMask gt = resample_nearest(tc.mask, grid.full_shape());
            for (int k = 1; k <= organs; ++k) cr.organ_dsc.push_back(dice(pred, gt, k));
            if (predicted_masks) variant_masks.push_back(std::move(pred));
            vr.cases.push_back(std::move(cr));
        }
        if (predicted_masks) predicted_masks->push_back(std::move(variant_masks));
        report.variants.push_back(std::move(vr));
    }
    return report;
}

}  // namespace darr
