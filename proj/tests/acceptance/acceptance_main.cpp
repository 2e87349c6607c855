// Acceptance suite. Each criterion prints one [PASS]/[FAIL] line; the exit
// code is the number of failed criteria. Criterion 4 is the desk-scale
// ablation experiment and dominates the runtime; its trained checkpoints are
// cached in the work directory so re-runs only re-evaluate.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "darr/adaptation.hpp"
#include "darr/evaluation.hpp"
#include "darr/experiment.hpp"
#include "darr/io.hpp"
#include "darr/losses.hpp"
#include "darr/networks.hpp"
#include "darr/phantom.hpp"
#include "darr/plot.hpp"
#include "darr/training.hpp"

using namespace darr;

namespace {

struct Args {
    int criterion = 0;  // 0 = all
    fs::path darr_bin;
    fs::path work_dir = "acceptance_work";
};

struct CheckList {
    bool ok = true;
    std::vector<std::string> failures;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            failures.push_back(what);
            std::cout << "    FAILED check: " << what << "\n";
        }
    }
};

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criterion 1: unit-property suite.
// ---------------------------------------------------------------------------
bool criterion1(const Args&) {
    CheckList c;

    // label bijection for all grids W,H,L <= 5
    for (int w = 1; w <= 5 && c.ok; ++w)
        for (int h = 1; h <= 5; ++h)
            for (int l = 1; l <= 5; ++l) {
                std::vector<int> hits(static_cast<std::size_t>(w) * h * l, 0);
                for (int z = 0; z < l; ++z)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            ++hits[static_cast<std::size_t>(row_major_label(x, y, z, w, h))];
                for (int v : hits)
                    if (v != 1) c.expect(false, "label bijection broken at grid " +
                                                    std::to_string(w) + "x" + std::to_string(h) +
                                                    "x" + std::to_string(l));
            }

    // permutation round-trip
    {
        Rng rng(404);
        for (int trial = 0; trial < 50; ++trial) {
            const i64 n = 1 + static_cast<i64>(rng.below(40));
            std::vector<LabeledPatch> items(static_cast<std::size_t>(n));
            for (i64 i = 0; i < n; ++i) items[static_cast<std::size_t>(i)].label = i;
            auto shuffled = apply_permutation(items, sample_permutation(n, rng));
            std::sort(shuffled.begin(), shuffled.end(),
                      [](const LabeledPatch& a, const LabeledPatch& b) { return a.label < b.label; });
            for (i64 i = 0; i < n; ++i)
                c.expect(shuffled[static_cast<std::size_t>(i)].label == i,
                         "permutation round-trip broken");
        }
    }

    // squeeze linearity (relative tolerance 1e-6)
    {
        Rng rng(405);
        const Vec3i shape{5, 6, 8};
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<double> p(static_cast<std::size_t>(shape.count())), q(p.size());
            for (auto& v : p) v = rng.uniform(-3, 3);
            for (auto& v : q) v = rng.uniform(-3, 3);
            const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
            std::vector<double> mix(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) mix[i] = a * p[i] + b * q[i];
            auto sp = squeeze_axial_values(p, shape, 4);
            auto sq = squeeze_axial_values(q, shape, 4);
            auto sm = squeeze_axial_values(mix, shape, 4);
            for (std::size_t i = 0; i < sm.size(); ++i) {
                const double want = a * sp[i] + b * sq[i];
                const double denom = std::max(1e-9, std::abs(want));
                c.expect(std::abs(sm[i] - want) / denom < 1e-6, "squeeze linearity violated");
            }
        }
    }

    // row-stochastic puzzle output over 1000 random inputs
    {
        const int n = 8, per = 5;
        PuzzleHead<double> head(n, per, 16);
        Rng rng(406);
        head.init(rng);
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<double> x(static_cast<std::size_t>(n) * per);
            for (auto& v : x) v = rng.uniform(-4, 4);
            const auto probs = head.forward(x);
            for (int a = 0; a < n; ++a) {
                double row = 0;
                for (int j = 0; j < n; ++j) {
                    const double p = probs[static_cast<std::size_t>(a) * n + j];
                    row += p;
                    if (p <= 0.0 || p >= 1.0) c.expect(false, "puzzle prob outside (0,1)");
                }
                c.expect(std::abs(row - 1.0) <= 1e-6, "puzzle row does not sum to 1 within 1e-6");
            }
        }
    }

    // analytic cases
    {
        // uniform-logits cross entropy == ln C within 1e-9
        const int classes = 9;
        nn::Feat<double> logits(classes, {3, 3, 3}, 0.42);
        SegmentationMask mask({3, 3, 3}, classes);
        Rng rng(407);
        for (auto& l : mask.labels) l = static_cast<u16>(rng.below(classes));
        c.expect(std::abs(seg_loss(logits, mask) - std::log(9.0)) <= 1e-9,
                 "uniform-logits CE != ln C within 1e-9");

        // JSD maximum == ln 2 within 1e-9
        c.expect(std::abs(js_divergence({1, 0}, {0, 1}) - std::log(2.0)) <= 1e-9,
                 "JSD max != ln 2 within 1e-9");

        // uniform 27x27 puzzle loss == ln 27 within 1e-6
        std::vector<double> uniform(27 * 27, 1.0 / 27);
        std::vector<i64> labels(27);
        for (int i = 0; i < 27; ++i) labels[static_cast<std::size_t>(i)] = (i * 5 + 2) % 27;
        c.expect(std::abs(puzzle_loss(uniform, labels) - std::log(27.0)) <= 1e-6,
                 "uniform puzzle loss != ln 27 within 1e-6");

        // DSC analytic cases
        SegmentationMask p({10, 10, 1}, 2), g({10, 10, 1}, 2);
        c.expect(dice(p, g, 1) == 1.0, "both-empty DSC != 1.0");
        for (i64 i = 0; i < 10; ++i) p.labels[static_cast<std::size_t>(i)] = 1;
        for (i64 i = 5; i < 15; ++i) g.labels[static_cast<std::size_t>(i)] = 1;
        c.expect(std::abs(dice(p, g, 1) - 0.5) <= 1e-12, "DSC overlap case != 0.5");
    }
    return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient check on the tiny configuration.
// ---------------------------------------------------------------------------
struct GradStats {
    double max_rel_err = 0.0;
    int samples = 0;
};

void check_grads(const std::vector<nn::Param<double>*>& params,
                 const std::function<double()>& forward, int per_tensor, GradStats& stats,
                 u64 seed) {
    Rng rng(seed);
    for (auto* p : params) {
        const int samples = std::min<int>(per_tensor, static_cast<int>(p->w.size()));
        for (int s = 0; s < samples; ++s) {
            const std::size_t i = static_cast<std::size_t>(rng.below(p->w.size()));
            const double keep = p->w[i];
            const double h = 1e-5 * std::max(1.0, std::abs(keep));
            p->w[i] = keep + h;
            const double fp = forward();
            p->w[i] = keep - h;
            const double fm = forward();
            p->w[i] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double bp = p->g[i];
            const double rel = std::abs(fd - bp) / std::max({std::abs(fd), std::abs(bp), 1e-7});
            stats.max_rel_err = std::max(stats.max_rel_err, rel);
            ++stats.samples;
        }
    }
}

bool criterion2(const Args&) {
    CheckList c;
    NetworkConfig cfg;
    cfg.encoder_depth = 2;
    cfg.encoder_widths = {4, 6, 8};
    cfg.num_classes = 4;
    cfg.sr_factor = 4;
    cfg.sr_width = 6;
    cfg.sr_blocks = 1;
    cfg.puzzle_hidden = 8;
    const PatchGrid grid{2, 2, 2, {8, 8, 8}};

    PhantomSpec spec;
    spec.num_organs = 3;
    spec.base_shape = {16, 16, 16};
    spec.jitter = 0.01;
    spec.texture_sigma = 1.5;
    spec.organ_templates = {OrganTemplate{{2.5, 2, 2}, 120.0}, OrganTemplate{{2, 2.5, 2}, 180.0},
                            OrganTemplate{{2, 2, 2.5}, 240.0}};
    spec.relative_offsets = {{0.3, 0.3, 0.3}, {0.7, 0.4, 0.4}, {0.4, 0.7, 0.7}};
    const CaseData cd = generate_phantom(spec, 77);

    DarrModel<double> model(cfg, static_cast<int>(grid.cells()), grid.patch_shape, 31337);
    // normalize inputs to keep magnitudes tame in double mode
    Volume vol = resample_trilinear(cd.volume, grid.full_shape());
    for (auto& v : vol.data) v = v / 100.f - 1.f;
    const SegmentationMask mask = resample_nearest(cd.mask, grid.full_shape());
    Rng prng(55);
    const Permutation perm = sample_permutation(grid.cells(), prng);
    const PuzzleBatch<double> batch = make_puzzle_batch<double>(vol, mask, grid, 4, perm);
    JointContext<double> ctx(model, 2);
    auto all = model.all_params();

    GradStats stats;
    const auto t0 = std::chrono::steady_clock::now();

    // (i) segmentation loss alone: weights (0,0)
    {
        LossWeights w{0.0, 0.0};
        nn::zero_grads(all);
        ctx.train_step_grads(batch, w);
        auto fwd = [&] { return ctx.eval_losses(batch, w).total; };
        std::vector<nn::Param<double>*> sampled = model.theta_sr();
        for (auto* p : model.theta_en()) sampled.push_back(p);
        for (auto* p : model.theta_de()) sampled.push_back(p);
        check_grads(sampled, fwd, 2, stats, 1001);
    }
    // (ii) SR loss alone, directly through the SR network
    {
        const auto& lo = batch.lowres[0];
        const auto& hi = batch.hires[0];
        auto fwd = [&] {
            DarrModel<double>& m = model;
            return static_cast<double>(sr_loss(m.sr.forward(lo), hi));
        };
        nn::zero_grads(all);
        nn::Feat<double> pred = model.sr.forward(lo);
        nn::Feat<double> grad;
        sr_loss_grad(pred, hi, 1.0, grad);
        model.sr.backward(grad);
        check_grads(model.theta_sr(), fwd, 4, stats, 1002);
    }
    // (iii) puzzle loss alone
    {
        nn::zero_grads(all);
        ctx.puzzle_step_grads(batch);
        LossWeights w{0.0, 1.0};
        auto fwd = [&] { return ctx.eval_losses(batch, w).puzzle; };
        std::vector<nn::Param<double>*> sampled = model.theta_sr();
        for (auto* p : model.theta_en()) sampled.push_back(p);
        for (auto* p : model.theta_p()) sampled.push_back(p);
        check_grads(sampled, fwd, 2, stats, 1003);
    }
    // (iv) the joint objective at the reference weights
    {
        LossWeights w{30.0, 0.1};
        nn::zero_grads(all);
        ctx.train_step_grads(batch, w);
        auto fwd = [&] { return ctx.eval_losses(batch, w).total; };
        check_grads(all, fwd, 2, stats, 1004);
    }

    std::printf("    gradcheck: %d samples, max relative error %.3e (%.1f s)\n", stats.samples,
                stats.max_rel_err, elapsed_since(t0));
    c.expect(stats.samples >= 100, "fewer than 100 parameters sampled");
    c.expect(stats.max_rel_err < 1e-4, "max relative error >= 1e-4");
    return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 3: rollback exactness and case-order independence.
// ---------------------------------------------------------------------------
bool criterion3(const Args&) {
    CheckList c;
    NetworkConfig cfg;
    cfg.encoder_depth = 2;
    cfg.encoder_widths = {3, 6, 12};
    cfg.num_classes = 9;
    cfg.sr_factor = 4;
    cfg.sr_width = 4;
    cfg.sr_blocks = 1;
    cfg.puzzle_hidden = 32;
    const PatchGrid grid{2, 2, 2, {16, 16, 16}};

    PhantomSpec spec = default_phantom_spec();
    spec.base_shape = {32, 32, 32};
    for (auto& t : spec.organ_templates)
        t.half_axes = {t.half_axes.x / 2, t.half_axes.y / 2, t.half_axes.z / 2};

    std::vector<CaseData> source;
    for (int i = 0; i < 5; ++i) source.push_back(generate_phantom(spec, derive_seed(1, i)));
    DarrModel<float> model(cfg, static_cast<int>(grid.cells()), grid.patch_shape, 99);
    TrainConfig tc;
    tc.iterations = 120;
    tc.learning_rate = 1e-3;
    tc.seed = 7;
    tc.workers = 2;
    train<float>(model, source, grid, tc, LossWeights{30.0, 0.1});

    const DomainShift shift = default_target_shift();
    std::vector<Volume> targets;
    for (int i = 0; i < 10; ++i) {
        CaseData t = generate_phantom(spec, derive_seed(2, i));
        targets.push_back(apply_domain_shift(t.volume, shift, derive_seed(3, i)));
    }

    AdaptConfig acfg;
    acfg.iterations = 10;
    acfg.learning_rate = 1e-4;
    acfg.seed = 5;
    acfg.workers = 2;

    const u64 full_before = model.checksum();
    std::vector<SegmentationMask> first_pass;
    for (int i = 0; i < 10; ++i) {
        first_pass.push_back(predict_with_adaptation(model, targets[static_cast<std::size_t>(i)],
                                                     grid, acfg)
                                 .mask);
        c.expect(model.checksum() == full_before,
                 "full-model checksum changed after call " + std::to_string(i));
    }

    // reordered pass (reverse) must reproduce every mask voxel-for-voxel
    std::vector<SegmentationMask> second_pass(10);
    for (int i = 9; i >= 0; --i) {
        second_pass[static_cast<std::size_t>(i)] =
            predict_with_adaptation(model, targets[static_cast<std::size_t>(i)], grid, acfg).mask;
        c.expect(model.checksum() == full_before, "checksum changed in reordered pass");
    }
    for (int i = 0; i < 10; ++i)
        c.expect(first_pass[static_cast<std::size_t>(i)].labels ==
                     second_pass[static_cast<std::size_t>(i)].labels,
                 "case " + std::to_string(i) + " mask differs under reordering");

    // decoder frozen through adapt_to_image itself
    for (int i = 0; i < 10; ++i) {
        const u64 de = model.decoder_checksum();
        const ParamSnapshot<float> snap = snapshot(model);
        adapt_to_image(model, targets[static_cast<std::size_t>(i)], grid, acfg);
        c.expect(model.decoder_checksum() == de,
                 "decoder checksum changed during adapt_to_image on case " + std::to_string(i));
        restore(model, snap);
    }
    c.expect(model.checksum() == full_before, "model not restored after instrumented pass");
    return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 4: desk-scale ablation. Four variants x three seeds at patch 32^3.
// ---------------------------------------------------------------------------
struct VariantSpec {
    std::string name;
    bool use_sr;
    bool use_puzzle;
    bool adapt;
};

const std::vector<VariantSpec>& variant_specs() {
    static const std::vector<VariantSpec> v = {
        {kVariantLowerBound, false, false, false},
        {kVariantPuzzle, false, true, true},
        {kVariantSr, true, false, false},
        {kVariantDarr, true, true, true},
    };
    return v;
}

bool criterion4(const Args& args) {
    CheckList c;
    const fs::path work = args.work_dir / "criterion4";
    fs::create_directories(work);

    // ---- pinned experiment scale ----
    const PatchGrid grid{2, 2, 2, {32, 32, 32}};  // patch 32^3 (reduced scale)
    const int n_source = 20, n_target = 10;
    const i64 train_iters = 5000;
    const std::vector<u64> seeds = {1, 2, 3};
    NetworkConfig base_cfg;
    base_cfg.encoder_depth = 2;
    base_cfg.encoder_widths = {4, 8, 16};
    base_cfg.num_classes = 9;
    base_cfg.sr_factor = 4;
    base_cfg.sr_width = 6;
    base_cfg.sr_blocks = 1;
    base_cfg.puzzle_hidden = 64;
    const LossWeights weights{30.0, 0.1};
    AdaptConfig acfg;
    acfg.iterations = 60;
    acfg.learning_rate = 4e-4;
    acfg.permutations_per_iter = 1;
    acfg.workers = 2;

    const PhantomSpec spec = default_phantom_spec();
    const DomainShift source_shift = default_source_shift();
    const DomainShift target_shift = default_target_shift();

    struct SeedOutcome {
        std::map<std::string, double> mean_dsc;
        int improved_cases = 0;
        int adapted_cases = 0;
    };
    std::vector<SeedOutcome> outcomes;

    for (const u64 seed : seeds) {
        std::printf("    seed %llu: generating data\n", static_cast<unsigned long long>(seed));
        auto [source, target] = make_domain_pair(spec, source_shift, target_shift,
                                                 std::max(n_source, n_target),
                                                 derive_seed(seed, 0xda7a));
        source.cases.resize(n_source);
        target.cases.resize(n_target);

        std::map<std::string, std::shared_ptr<DarrModel<float>>> models;
        for (const auto& vs : variant_specs()) {
            NetworkConfig cfg = base_cfg;
            cfg.use_sr = vs.use_sr;
            cfg.use_puzzle = vs.use_puzzle;
            const fs::path ckpt_path =
                work / ("seed" + std::to_string(seed) + "_" + vs.name + ".dckpt");
            std::shared_ptr<DarrModel<float>> model;
            bool loaded = false;
            if (fs::exists(ckpt_path)) {
                try {
                    auto loaded_ckpt = ckpt::load<float>(ckpt_path);
                    if (loaded_ckpt.iteration == static_cast<u64>(train_iters)) {
                        model = loaded_ckpt.model;
                        loaded = true;
                        std::printf("    seed %llu %s: cached checkpoint\n",
                                    static_cast<unsigned long long>(seed), vs.name.c_str());
                    }
                } catch (const std::exception&) {
                    loaded = false;
                }
            }
            if (!loaded) {
                model = std::make_shared<DarrModel<float>>(
                    cfg, static_cast<int>(grid.cells()), grid.patch_shape, derive_seed(seed, 0x77));
                TrainConfig tc;
                tc.iterations = train_iters;
                tc.learning_rate = 3e-4;
                tc.seed = seed;
                tc.workers = 2;
                tc.checkpoint_every = train_iters;
                const auto t0 = std::chrono::steady_clock::now();
                const fs::path run_dir = work / ("seed" + std::to_string(seed) + "_" + vs.name);
                train<float>(*model, source.cases, grid, tc, weights, run_dir,
                             nlohmann::json{{"variant", vs.name}, {"seed", seed}, {"grid", grid}});
                ckpt::save(ckpt_path, *model, static_cast<u64>(train_iters));
                std::printf("    seed %llu %s: trained %lld iters in %.0f s\n",
                            static_cast<unsigned long long>(seed), vs.name.c_str(),
                            static_cast<long long>(train_iters), elapsed_since(t0));
            }
            models[vs.name] = model;
        }

        std::vector<VariantModel<float>> vms;
        for (const auto& vs : variant_specs())
            vms.push_back(VariantModel<float>{vs.name, models[vs.name].get(), vs.adapt});
        std::vector<std::string> ids;
        for (int i = 0; i < n_target; ++i) ids.push_back("t" + std::to_string(i));
        acfg.seed = derive_seed(seed, 0xada);
        ExperimentReport report =
            evaluate_variants<float>(vms, target.cases, ids, grid, acfg, 8);
        report.config_echo = nlohmann::json{
            {"grid", grid},          {"seeds", seeds},   {"iterations", train_iters},
            {"network", base_cfg},   {"adapt", acfg},    {"loss_weights", weights},
            {"n_source", n_source},  {"n_target", n_target}};
        write_json_file(work / ("report_seed" + std::to_string(seed) + ".json"), report);
        std::ofstream(work / ("report_seed" + std::to_string(seed) + ".tsv"))
            << report_table_tsv(report);
        plot::save_dsc_boxplot(report, work / ("boxplot_seed" + std::to_string(seed) + ".png"));

        SeedOutcome so;
        for (const auto& v : report.variants) so.mean_dsc[v.variant] = v.mean_dsc();
        const VariantResult* darr_res = report.find(kVariantDarr);
        for (const auto& cr : darr_res->cases) {
            if (cr.adapted) ++so.adapted_cases;
            if (!std::isnan(cr.puzzle_loss_before) && !std::isnan(cr.puzzle_loss_after) &&
                cr.puzzle_loss_after < cr.puzzle_loss_before)
                ++so.improved_cases;
        }
        std::printf("    seed %llu means: lb %.3f / puzzle %.3f / sr %.3f / darr %.3f; "
                    "puzzle loss improved %d/%d\n",
                    static_cast<unsigned long long>(seed), so.mean_dsc[kVariantLowerBound],
                    so.mean_dsc[kVariantPuzzle], so.mean_dsc[kVariantSr],
                    so.mean_dsc[kVariantDarr], so.improved_cases, n_target);
        outcomes.push_back(so);
    }

    for (std::size_t s = 0; s < outcomes.size(); ++s) {
        const auto& so = outcomes[s];
        const std::string tag = "seed " + std::to_string(seeds[s]);
        const double lb = so.mean_dsc.at(kVariantLowerBound);
        const double pz = so.mean_dsc.at(kVariantPuzzle);
        const double sr = so.mean_dsc.at(kVariantSr);
        const double da = so.mean_dsc.at(kVariantDarr);
        c.expect(so.improved_cases >= 8,
                 tag + ": puzzle loss reduced in only " + std::to_string(so.improved_cases) +
                     "/10 cases (need >= 8)");
        c.expect(da > lb + 0.05,
                 tag + ": DARR mean DSC does not beat lower bound by 5 points");
        c.expect(lb <= std::max(pz, sr) && std::max(pz, sr) <= da,
                 tag + ": ordering lb <= max(puzzle, sr) <= darr violated");
    }
    return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 5: JSD matrix diagonal dominance between two fresh phantom sets.
// ---------------------------------------------------------------------------
bool criterion5(const Args& args) {
    CheckList c;
    const PhantomSpec spec = default_phantom_spec();
    std::vector<SegmentationMask> a, b;
    for (int i = 0; i < 10; ++i) a.push_back(generate_phantom(spec, derive_seed(0xaaa, i)).mask);
    for (int i = 0; i < 10; ++i) b.push_back(generate_phantom(spec, derive_seed(0xbbb, i)).mask);
    const PatchGrid grid{3, 3, 3, {22, 22, 22}};
    const JsdMatrix m = jsd_matrix(a, b, grid);
    fs::create_directories(args.work_dir);
    plot::save_jsd_heatmap(m, args.work_dir / "criterion5_jsd.png");
    for (int i = 0; i < m.organs; ++i) {
        if (std::isnan(m.at(i, i))) continue;
        double off = 0;
        int cnt = 0;
        for (int j = 0; j < m.organs; ++j) {
            if (j == i || std::isnan(m.at(i, j))) continue;
            off += m.at(i, j);
            ++cnt;
        }
        c.expect(cnt > 0 && m.at(i, i) < off / cnt,
                 "organ " + std::to_string(i + 1) + ": diagonal JSD not below its row mean");
    }
    return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 6: CLI-level zero-iteration equivalence, voxel for voxel.
// ---------------------------------------------------------------------------
int run_cli(const fs::path& bin, const std::string& cli_args) {
    const std::string cmd = bin.string() + " " + cli_args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

bool criterion6(const Args& args) {
    CheckList c;
    if (args.darr_bin.empty() || !fs::exists(args.darr_bin)) {
        c.expect(false, "darr binary not found (pass --darr-bin)");
        return c.ok;
    }
    const fs::path work = args.work_dir / "criterion6";
    fs::remove_all(work);
    fs::create_directories(work);

    // tiny experiment config with SR disabled and the puzzle head on
    nlohmann::json cfg;
    cfg["grid"] = PatchGrid{2, 2, 2, {8, 8, 8}};
    cfg["squeeze_factor"] = 2;
    PhantomSpec spec;
    spec.num_organs = 2;
    spec.base_shape = {16, 16, 16};
    spec.jitter = 0.02;
    spec.texture_sigma = 1.0;
    spec.organ_templates = {OrganTemplate{{3, 3, 3}, 120.0}, OrganTemplate{{3, 3, 3}, 180.0}};
    spec.relative_offsets = {{0.3, 0.35, 0.3}, {0.7, 0.4, 0.65}};
    cfg["phantom_spec"] = spec;
    NetworkConfig net;
    net.encoder_depth = 1;
    net.encoder_widths = {3, 6};
    net.num_classes = 3;
    net.sr_factor = 2;
    net.sr_width = 3;
    net.sr_blocks = 0;
    net.puzzle_hidden = 12;
    net.use_sr = false;  // SR disabled
    net.use_puzzle = true;
    cfg["network"] = net;
    TrainConfig tc;
    tc.iterations = 30;
    tc.learning_rate = 1e-3;
    tc.seed = 3;
    cfg["train"] = tc;
    cfg["seed"] = 3;
    write_json_file(work / "config.json", cfg);
    write_json_file(work / "spec.json", nlohmann::json(spec));

    c.expect(run_cli(args.darr_bin, "phantom-gen --spec " + (work / "spec.json").string() +
                                        " --cases 4 --seed 11 --out " +
                                        (work / "source").string()) == 0,
             "phantom-gen (source) failed");
    DomainShift shift;
    shift.axial_spacing_factor = 2;
    shift.intensity_gain = 1.1;
    shift.intensity_bias = 5.0;
    shift.noise_sigma = 2.0;
    shift.blur_sigma = 0.5;
    write_json_file(work / "shift.json", nlohmann::json(shift));
    c.expect(run_cli(args.darr_bin, "phantom-gen --spec " + (work / "spec.json").string() +
                                        " --shift " + (work / "shift.json").string() +
                                        " --cases 3 --seed 21 --domain target --out " +
                                        (work / "target").string()) == 0,
             "phantom-gen (target) failed");
    c.expect(run_cli(args.darr_bin, "train --config " + (work / "config.json").string() +
                                        " --data " + (work / "source").string() + " --out " +
                                        (work / "run").string()) == 0,
             "train failed");

    const fs::path model = work / "run" / "model_final.dckpt";
    c.expect(fs::exists(model), "train did not write model_final.dckpt");
    if (!c.ok) return c.ok;

    c.expect(run_cli(args.darr_bin, "eval --model " + model.string() + " --data " +
                                        (work / "target").string() + " --dump-masks --out " +
                                        (work / "eval_plain").string()) == 0,
             "eval failed");
    c.expect(run_cli(args.darr_bin, "adapt-eval --model " + model.string() + " --data " +
                                        (work / "target").string() +
                                        " --adapt-iters 0 --dump-masks --out " +
                                        (work / "eval_zero").string()) == 0,
             "adapt-eval --adapt-iters 0 failed");

    for (int i = 0; i < 3; ++i) {
        const std::string id = "target_00" + std::to_string(i);
        const fs::path a = work / "eval_plain" / ("plain_inference_" + id + "_pred.raw");
        const fs::path b = work / "eval_zero" / ("darr_" + id + "_pred.raw");
        if (!fs::exists(a) || !fs::exists(b)) {
            c.expect(false, "missing predicted mask dump for " + id);
            continue;
        }
        const auto ba = read_file_bytes(a);
        const auto bb = read_file_bytes(b);
        c.expect(ba == bb, "masks differ voxel-for-voxel for " + id);
    }
    return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
    Args args;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        auto next = [&]() -> std::string {
            if (i + 1 >= argc) {
                std::cerr << "missing value for " << a << "\n";
                std::exit(2);
            }
            return argv[++i];
        };
        if (a == "--criterion") args.criterion = std::stoi(next());
        else if (a == "--darr-bin") args.darr_bin = next();
        else if (a == "--work-dir") args.work_dir = next();
        else {
            std::cerr << "unknown argument: " << a << "\n";
            return 2;
        }
    }
    fs::create_directories(args.work_dir);

    struct Entry {
        int id;
        const char* label;
        std::function<bool(const Args&)> fn;
    };
    const std::vector<Entry> entries = {
        {1, "unit-property suite", criterion1},
        {2, "finite-difference gradient check", criterion2},
        {3, "rollback exactness and case independence", criterion3},
        {4, "desk-scale ablation (lower bound / puzzle / SR / DARR)", criterion4},
        {5, "organ-location JSD diagonal dominance", criterion5},
        {6, "zero-iteration equivalence through the CLI", criterion6},
    };

    int failures = 0;
    for (const auto& e : entries) {
        if (args.criterion != 0 && args.criterion != e.id) continue;
        std::printf("criterion %d: %s\n", e.id, e.label);
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = e.fn(args);
        } catch (const std::exception& ex) {
            std::printf("    exception: %s\n", ex.what());
        }
        std::printf("[%s] criterion %d: %s (%.1f s)\n", ok ? "PASS" : "FAIL", e.id, e.label,
                    elapsed_since(t0));
        if (!ok) ++failures;
    }
    return failures;
}
