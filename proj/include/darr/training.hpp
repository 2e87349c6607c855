#pragma once

#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "darr/io.hpp"
#include "darr/losses.hpp"
#include "darr/networks.hpp"
#include "darr/nn/optim.hpp"

namespace darr {

struct TrainConfig {
    i64 iterations = 40000;
    int batch_size = 1;  // puzzles per optimizer step; one puzzle is the unit
    double learning_rate = 3e-4;
    u64 seed = 0;
    i64 checkpoint_every = 2000;
    int workers = 0;  // 0 = pick from hardware / DARR_DETERMINISTIC

    void validate() const {
        require<ConfigError>(iterations >= 1, "TrainConfig: iterations must be >= 1");
        require<ConfigError>(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        require<ConfigError>(learning_rate > 0, "TrainConfig: learning_rate must be > 0");
        require<ConfigError>(checkpoint_every >= 1, "TrainConfig: checkpoint cadence must be >= 1");
    }

    int effective_workers() const { return workers > 0 ? workers : default_workers(); }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"iterations", c.iterations},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"workers", c.workers}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.workers = j.value("workers", d.workers);
}

struct LossRow {
    i64 iteration = 0;
    double seg = 0, sr = 0, puzzle = 0, total = 0, wall_seconds = 0;
};

struct TrainResult {
    std::vector<LossRow> curve;
    i64 iterations_done = 0;
};

struct TrainingDiverged : IntegrityError {
    using IntegrityError::IntegrityError;
};

/// Source-domain training: per iteration, sample a case and a permutation,
/// build the puzzle batch, take one optimizer step on the joint objective
/// for all four parameter groups. Deterministic given the seed.
///
/// A non-finite loss aborts with a diagnostic checkpoint (when out_dir given)
/// rather than silently skipping the step.
template <class T>
inline TrainResult train(DarrModel<T>& model, std::span<const CaseData> dataset,
                         const PatchGrid& grid, const TrainConfig& tc, const LossWeights& weights,
                         const fs::path& out_dir = {},
                         const nlohmann::json& config_echo = {}) {
    tc.validate();
    weights.validate();
    grid.validate();
    require<ConfigError>(!dataset.empty(), "train: dataset is empty");
    require<ConfigError>(grid.cells() == model.n_cells,
                         "train: grid cell count does not match the model");
    require<ConfigError>(grid.patch_shape == model.patch_shape,
                         "train: grid patch_shape does not match the model");

    const int factor = model.cfg.sr_factor;
    // Resampling to the grid geometry is deterministic; cache it per case.
    std::vector<Volume> vols;
    std::vector<SegmentationMask> masks;
    vols.reserve(dataset.size());
    masks.reserve(dataset.size());
    for (const auto& c : dataset) {
        vols.push_back(resample_trilinear(c.volume, grid.full_shape()));
        masks.push_back(resample_nearest(c.mask, grid.full_shape()));
        require<ConfigError>(masks.back().num_classes <= model.cfg.num_classes,
                             "train: mask classes exceed model num_classes");
    }

    std::ofstream log;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log.open(out_dir / "loss_log.tsv", std::ios::app);
        log << "iteration\tseg\tsr\tpuzzle\ttotal\twall_seconds\n";
    }

    JointContext<T> ctx(model, tc.effective_workers());
    nn::Adam<T> adam(static_cast<T>(tc.learning_rate));
    Rng rng(derive_seed(tc.seed, 0x7261));
    auto params = model.all_params();
    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();

    for (i64 iter = 1; iter <= tc.iterations; ++iter) {
        nn::zero_grads(params);
        LossBreakdown acc;
        for (int b = 0; b < tc.batch_size; ++b) {
            const std::size_t case_idx = static_cast<std::size_t>(rng.below(dataset.size()));
            const Permutation perm = sample_permutation(grid.cells(), rng);
            const PuzzleBatch<T> batch = make_puzzle_batch<T>(
                vols[case_idx], masks[case_idx], grid, factor, perm);
            const LossBreakdown l = ctx.train_step_grads(batch, weights);
            acc.seg += l.seg / tc.batch_size;
            acc.sr += l.sr / tc.batch_size;
            acc.puzzle += l.puzzle / tc.batch_size;
            acc.total += l.total / tc.batch_size;
        }
        if (!acc.finite()) {
            if (!out_dir.empty())
                ckpt::save(out_dir / "diagnostic.dckpt", model, static_cast<u64>(iter), &adam,
                           config_echo);
            throw TrainingDiverged("train: non-finite loss at iteration " + std::to_string(iter) +
                                   (out_dir.empty() ? "" : "; diagnostic checkpoint written"));
        }
        adam.step(params);

        LossRow row{iter, acc.seg, acc.sr, acc.puzzle, acc.total,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        result.curve.push_back(row);
        if (log.is_open()) {
            log << row.iteration << '\t' << row.seg << '\t' << row.sr << '\t' << row.puzzle << '\t'
                << row.total << '\t' << row.wall_seconds << '\n';
            if (iter % 50 == 0) log.flush();
        }
        if (!out_dir.empty() && (iter % tc.checkpoint_every == 0))
            ckpt::save(out_dir / ("ckpt_" + std::to_string(iter) + ".dckpt"), model,
                       static_cast<u64>(iter), &adam, config_echo);
        result.iterations_done = iter;
    }
    if (!out_dir.empty())
        ckpt::save(out_dir / "model_final.dckpt", model, static_cast<u64>(tc.iterations), &adam,
                   config_echo);
    return result;
}

}  // namespace darr
