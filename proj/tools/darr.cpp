// darr: domain-adaptive relational reasoning segmentation toolkit.
//
// Subcommands: phantom-gen, train, adapt-eval, eval, jsd-report, plot.
// Exit codes: 0 ok, 1 runtime/validation failure, 2 usage error.

#include <CLI11.hpp>
#include <array>
#include <iostream>
#include <string>

#include "darr/adaptation.hpp"
#include "darr/evaluation.hpp"
#include "darr/experiment.hpp"
#include "darr/io.hpp"
#include "darr/phantom.hpp"
#include "darr/plot.hpp"
#include "darr/training.hpp"

namespace {

using namespace darr;

u32 checkpoint_scalar_bits(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require<ConfigError>(in.good(), "cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    require<IntegrityError>(in.good() && std::memcmp(magic, ckpt::kMagic, 8) == 0,
                            "not a checkpoint file: " + path.string());
    u32 bytes = 0;
    in.read(reinterpret_cast<char*>(&bytes), 4);
    return bytes * 8;
}

PatchGrid grid_from_checkpoint_header(const nlohmann::json& extra, int n_cells, Vec3i patch) {
    PatchGrid g;
    if (extra.contains("grid")) {
        g = extra.at("grid").get<PatchGrid>();
    } else {
        // infer a plausible W=H=L grid from the cell count
        int side = 1;
        while (side * side * side < n_cells) ++side;
        require<ConfigError>(side * side * side == n_cells,
                             "checkpoint lacks grid info and cell count is not a cube");
        g.w = g.h = g.l = side;
    }
    g.patch_shape = patch;
    return g;
}

int cmd_phantom_gen(const std::string& spec_file, const std::string& shift_file, int cases,
                    u64 seed, const std::string& out, const std::string& domain) {
    PhantomSpec spec = default_phantom_spec();
    if (!spec_file.empty()) spec = read_json_file(spec_file).get<PhantomSpec>();
    DomainShift shift;
    if (!shift_file.empty()) shift = read_json_file(shift_file).get<DomainShift>();
    spec.validate();
    shift.validate();
    validate_learnable(spec, shift);

    DomainDataset ds;
    ds.domain = domain;
    for (int i = 0; i < cases; ++i) {
        const u64 cs = derive_seed(seed, static_cast<u64>(i));
        CaseData c = generate_phantom(spec, cs);
        c.volume = apply_domain_shift(c.volume, shift, derive_seed(cs, 1));
        ds.cases.push_back(std::move(c));
        ds.seeds.push_back(cs);
    }
    save_dataset(ds, out);
    write_config_echo(out, nlohmann::json{{"command", "phantom-gen"},
                                          {"phantom_spec", spec},
                                          {"shift", shift},
                                          {"cases", cases},
                                          {"seed", seed},
                                          {"domain", domain}});
    std::cout << "wrote " << cases << " cases to " << out << "\n";
    return 0;
}

NetworkConfig variant_network(NetworkConfig base, const std::string& variant) {
    if (variant == kVariantLowerBound) {
        base.use_sr = false;
        base.use_puzzle = false;
    } else if (variant == kVariantPuzzle) {
        base.use_sr = false;
        base.use_puzzle = true;
    } else if (variant == kVariantSr) {
        base.use_sr = true;
        base.use_puzzle = false;
    } else if (variant == kVariantDarr) {
        base.use_sr = true;
        base.use_puzzle = true;
    } else {
        throw ConfigError("unknown variant: " + variant);
    }
    return base;
}

template <class T>
int run_train(const ExperimentConfig& cfg, const std::string& variant, const fs::path& data,
              const fs::path& out) {
    LoadedDataset ds = load_dataset(data);
    NetworkConfig net = variant.empty() ? cfg.network : variant_network(cfg.network, variant);
    DarrModel<T> model(net, static_cast<int>(cfg.grid.cells()), cfg.grid.patch_shape,
                       derive_seed(cfg.seed, 0x1e7));
    nlohmann::json echo = cfg;
    echo["network"] = net;
    echo["grid"] = cfg.grid;
    echo["command"] = "train";
    echo["variant"] = variant.empty() ? "config" : variant;
    echo["data"] = data.string();
    echo["scalar_bits"] = sizeof(T) * 8;
    write_config_echo(out, echo);
    TrainResult res =
        train<T>(model, ds.cases, cfg.grid, cfg.train, cfg.weights, out, echo);
    std::cout << "trained " << res.iterations_done << " iterations; final total loss "
              << (res.curve.empty() ? 0.0 : res.curve.back().total) << "\n";
    return 0;
}

struct VariantPaths {
    std::string lower_bound, puzzle, sr, darr;
};

template <class T>
int run_adapt_eval(const fs::path& model_path, const VariantPaths& extra, const fs::path& data,
                   AdaptConfig acfg, const fs::path& out, bool adapt_main, bool dump_masks) {
    LoadedDataset ds = load_dataset(data);
    auto main_ckpt = ckpt::load<T>(model_path);
    const PatchGrid grid = grid_from_checkpoint_header(main_ckpt.extra, main_ckpt.n_cells,
                                                       main_ckpt.patch_shape);
    std::vector<VariantModel<T>> variants;
    std::vector<ckpt::Contents<T>> keep_alive;
    auto add = [&](const std::string& name, const std::string& path, bool adapt) {
        if (path.empty()) return;
        keep_alive.push_back(ckpt::load<T>(path));
        variants.push_back(VariantModel<T>{name, keep_alive.back().model.get(), adapt});
    };
    add(kVariantLowerBound, extra.lower_bound, false);
    add(kVariantPuzzle, extra.puzzle, true);
    add(kVariantSr, extra.sr, false);
    variants.push_back(VariantModel<T>{kVariantDarr, main_ckpt.model.get(), adapt_main});

    std::vector<std::vector<SegmentationMask>> masks;
    ExperimentReport report = evaluate_variants<T>(variants, ds.cases, ds.ids, grid, acfg, 8,
                                                   dump_masks ? &masks : nullptr);
    report.config_echo = nlohmann::json{{"command", "adapt-eval"},
                                        {"model", model_path.string()},
                                        {"data", data.string()},
                                        {"adapt", acfg},
                                        {"grid", grid},
                                        {"scalar_bits", sizeof(T) * 8}};
    fs::create_directories(out);
    write_json_file(out / "report.json", report);
    std::ofstream(out / "report.tsv") << report_table_tsv(report);
    write_config_echo(out, report.config_echo);
    if (dump_masks)
        for (std::size_t v = 0; v < masks.size(); ++v)
            for (std::size_t i = 0; i < masks[v].size(); ++i)
                save_mask(masks[v][i],
                          out / (report.variants[v].variant + "_" + ds.ids[i] + "_pred"));
    for (const auto& v : report.variants)
        std::cout << v.variant << " mean DSC " << v.mean_dsc() << "\n";
    return 0;
}

template <class T>
int run_eval(const fs::path& model_path, const fs::path& data, const fs::path& out,
             bool dump_masks) {
    LoadedDataset ds = load_dataset(data);
    auto c = ckpt::load<T>(model_path);
    const PatchGrid grid = grid_from_checkpoint_header(c.extra, c.n_cells, c.patch_shape);
    std::vector<VariantModel<T>> variants{
        VariantModel<T>{"plain_inference", c.model.get(), false}};
    AdaptConfig acfg;
    acfg.iterations = 0;
    std::vector<std::vector<SegmentationMask>> masks;
    ExperimentReport report = evaluate_variants<T>(variants, ds.cases, ds.ids, grid, acfg, 8,
                                                   dump_masks ? &masks : nullptr);
    report.config_echo = nlohmann::json{{"command", "eval"},
                                        {"model", model_path.string()},
                                        {"data", data.string()},
                                        {"grid", grid},
                                        {"scalar_bits", sizeof(T) * 8}};
    fs::create_directories(out);
    write_json_file(out / "report.json", report);
    std::ofstream(out / "report.tsv") << report_table_tsv(report);
    write_config_echo(out, report.config_echo);
    if (dump_masks)
        for (std::size_t i = 0; i < masks.at(0).size(); ++i)
            save_mask(masks[0][i], out / ("plain_inference_" + ds.ids[i] + "_pred"));
    std::cout << "plain inference mean DSC " << report.variants[0].mean_dsc() << "\n";
    return 0;
}

int cmd_jsd_report(const fs::path& data_a, const fs::path& data_b, std::array<int, 3> cells,
                   const fs::path& out) {
    LoadedDataset a = load_dataset(data_a);
    LoadedDataset b = load_dataset(data_b);
    auto grid_for = [&](const SegmentationMask& m) {
        PatchGrid g;
        g.w = cells[0];
        g.h = cells[1];
        g.l = cells[2];
        g.patch_shape = {std::max<i64>(1, (m.shape.x + g.w - 1) / g.w),
                         std::max<i64>(1, (m.shape.y + g.h - 1) / g.h),
                         std::max<i64>(1, (m.shape.z + g.l - 1) / g.l)};
        return g;
    };
    std::vector<SegmentationMask> masks_a, masks_b;
    for (auto& c : a.cases) masks_a.push_back(std::move(c.mask));
    for (auto& c : b.cases) masks_b.push_back(std::move(c.mask));
    // the cell structure must match across datasets even if voxel shapes differ
    const PatchGrid ga = grid_for(masks_a[0]);
    JsdMatrix m = jsd_matrix(masks_a, masks_b, ga);
    fs::create_directories(out);
    write_json_file(out / "jsd_matrix.json", nlohmann::json(m));
    write_config_echo(out, nlohmann::json{{"command", "jsd-report"},
                                          {"data_a", data_a.string()},
                                          {"data_b", data_b.string()},
                                          {"cells", cells}});
    double diag = 0, off = 0;
    int nd = 0, no = 0;
    for (int i = 0; i < m.organs; ++i)
        for (int j = 0; j < m.organs; ++j) {
            if (std::isnan(m.at(i, j))) continue;
            if (i == j) {
                diag += m.at(i, j);
                ++nd;
            } else {
                off += m.at(i, j);
                ++no;
            }
        }
    std::cout << "mean diagonal JSD " << (nd ? diag / nd : 0.0) << ", mean off-diagonal "
              << (no ? off / no : 0.0) << "\n";
    return 0;
}

int cmd_plot(const fs::path& report_path, const fs::path& loss_log, const fs::path& out) {
    fs::create_directories(out);
    bool wrote = false;
    if (!report_path.empty()) {
        ExperimentReport report = read_json_file(report_path).get<ExperimentReport>();
        if (!report.variants.empty()) {
            plot::save_dsc_boxplot(report, out / "dsc_boxplot.png");
            std::cout << "wrote " << (out / "dsc_boxplot.png").string() << "\n";
            wrote = true;
        }
        if (report.jsd) {
            plot::save_jsd_heatmap(*report.jsd, out / "jsd_heatmap.png");
            std::cout << "wrote " << (out / "jsd_heatmap.png").string() << "\n";
            wrote = true;
        }
    }
    if (!loss_log.empty()) {
        std::ifstream in(loss_log);
        require<ConfigError>(in.good(), "cannot open loss log: " + loss_log.string());
        std::string line;
        std::getline(in, line);  // header
        std::vector<std::array<double, 5>> rows;
        while (std::getline(in, line)) {
            std::array<double, 5> r{};
            double wall;
            if (std::sscanf(line.c_str(), "%lf %lf %lf %lf %lf %lf", &r[0], &r[1], &r[2], &r[3],
                            &r[4], &wall) == 6)
                rows.push_back(r);
        }
        plot::save_loss_curves(rows, out / "loss_curves.png");
        std::cout << "wrote " << (out / "loss_curves.png").string() << "\n";
        wrote = true;
    }
    require<ConfigError>(wrote, "plot: nothing to plot (give --report and/or --loss-log)");
    return 0;
}

int run_subcommand(int argc, char** argv) {
    CLI::App app{"darr: domain-adaptive relational reasoning segmentation toolkit"};
    app.require_subcommand(1);

    // phantom-gen
    auto* gen = app.add_subcommand("phantom-gen", "generate a phantom dataset");
    std::string gen_spec, gen_shift, gen_out, gen_domain = "source";
    int gen_cases = 10;
    u64 gen_seed = 0;
    gen->add_option("--spec", gen_spec, "phantom spec JSON (defaults built in)");
    gen->add_option("--shift", gen_shift, "domain shift JSON (default: identity)");
    gen->add_option("--cases", gen_cases, "number of cases")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--domain", gen_domain, "domain tag for the manifest");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a source dataset");
    std::string tr_config, tr_data, tr_out, tr_variant;
    bool tr_f64 = false;
    tr->add_option("--config", tr_config, "experiment config JSON")->required();
    tr->add_option("--data", tr_data, "dataset directory or manifest")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--variant", tr_variant,
                   "ablation variant: lower_bound|vnet_puzzle|vnet_sr|darr (default: config)");
    tr->add_flag("--f64", tr_f64, "64-bit scalars (deterministic mode)");

    // adapt-eval
    auto* ae = app.add_subcommand("adapt-eval", "test-time adaptation + evaluation");
    std::string ae_model, ae_data, ae_out, ae_lb, ae_puzzle, ae_sr;
    AdaptConfig ae_cfg;
    int ae_workers = 0;
    bool ae_no_adapt = false;
    ae->add_option("--model", ae_model, "checkpoint to adapt (reported as darr)")->required();
    ae->add_option("--data", ae_data, "target dataset directory or manifest")->required();
    ae->add_option("--adapt-iters", ae_cfg.iterations, "test-time iterations per image");
    ae->add_option("--adapt-lr", ae_cfg.learning_rate, "test-time SGD learning rate");
    ae->add_option("--permutations-per-iter", ae_cfg.permutations_per_iter,
                   "fresh permutations per step");
    ae->add_option("--seed", ae_cfg.seed, "adaptation seed");
    ae->add_option("--workers", ae_workers, "parallel workers");
    ae->add_option("--out", ae_out, "output directory")->required();
    ae->add_option("--model-lower-bound", ae_lb, "optional lower-bound checkpoint");
    ae->add_option("--model-puzzle", ae_puzzle, "optional puzzle-only checkpoint");
    ae->add_option("--model-sr", ae_sr, "optional SR-only checkpoint");
    ae->add_flag("--no-adapt", ae_no_adapt, "skip adaptation for the main model");
    bool ae_dump = false;
    ae->add_flag("--dump-masks", ae_dump, "write predicted masks per variant/case");

    // eval
    auto* ev = app.add_subcommand("eval", "plain inference + DSC report");
    std::string ev_model, ev_data, ev_out;
    ev->add_option("--model", ev_model, "checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory or manifest")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    bool ev_dump = false;
    ev->add_flag("--dump-masks", ev_dump, "write predicted masks per case");

    // jsd-report
    auto* jr = app.add_subcommand("jsd-report", "organ-location JSD matrix between two datasets");
    std::string jr_a, jr_b, jr_out;
    std::array<int, 3> jr_cells = {3, 3, 3};
    jr->add_option("--data-a", jr_a, "dataset A")->required();
    jr->add_option("--data-b", jr_b, "dataset B")->required();
    jr->add_option("--cells", jr_cells, "grid cells per axis (W H L)");
    jr->add_option("--out", jr_out, "output directory")->required();

    // plot
    auto* pl = app.add_subcommand("plot", "render report box plots / JSD heat map / loss curves");
    std::string pl_report, pl_log, pl_out;
    pl->add_option("--report", pl_report, "report.json from adapt-eval or eval");
    pl->add_option("--loss-log", pl_log, "loss_log.tsv from train");
    pl->add_option("--out", pl_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    if (*gen) return cmd_phantom_gen(gen_spec, gen_shift, gen_cases, gen_seed, gen_out, gen_domain);
    if (*tr) {
        ExperimentConfig cfg = load_experiment_config(tr_config);
        return tr_f64 ? run_train<double>(cfg, tr_variant, tr_data, tr_out)
                      : run_train<float>(cfg, tr_variant, tr_data, tr_out);
    }
    if (*ae) {
        ae_cfg.workers = ae_workers;
        VariantPaths extra{ae_lb, ae_puzzle, ae_sr};
        const u32 bits = checkpoint_scalar_bits(ae_model);
        if (bits == 64)
            return run_adapt_eval<double>(ae_model, extra, ae_data, ae_cfg, ae_out, !ae_no_adapt,
                                          ae_dump);
        return run_adapt_eval<float>(ae_model, extra, ae_data, ae_cfg, ae_out, !ae_no_adapt,
                                     ae_dump);
    }
    if (*ev) {
        const u32 bits = checkpoint_scalar_bits(ev_model);
        if (bits == 64) return run_eval<double>(ev_model, ev_data, ev_out, ev_dump);
        return run_eval<float>(ev_model, ev_data, ev_out, ev_dump);
    }
    if (*jr) return cmd_jsd_report(jr_a, jr_b, jr_cells, jr_out);
    if (*pl) return cmd_plot(pl_report, pl_log, pl_out);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_subcommand(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
