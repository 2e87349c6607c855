#pragma once

#include <string>
#include <vector>

#include "darr/adaptation.hpp"
#include "darr/io.hpp"
#include "darr/losses.hpp"
#include "darr/networks.hpp"
#include "darr/phantom.hpp"
#include "darr/training.hpp"

namespace darr {

inline void to_json(nlohmann::json& j, const PatchGrid& g) {
    j = {{"cells", {g.w, g.h, g.l}}, {"patch_shape", g.patch_shape}};
}
inline void from_json(const nlohmann::json& j, PatchGrid& g) {
    if (j.contains("cells")) {
        g.w = j["cells"][0].get<int>();
        g.h = j["cells"][1].get<int>();
        g.l = j["cells"][2].get<int>();
    }
    g.patch_shape = j.value("patch_shape", Vec3i{64, 64, 64});
}

/// One config to drive the whole recipe. Sub-configs referenced by file path
/// are inlined at load time so that the echoed config is self-contained.
struct ExperimentConfig {
    PatchGrid grid;
    int squeeze_factor = 4;
    PhantomSpec phantom = default_phantom_spec();
    DomainShift source_shift = default_source_shift();
    DomainShift target_shift = default_target_shift();
    NetworkConfig network;
    TrainConfig train;
    AdaptConfig adapt;
    LossWeights weights;
    u64 seed = 0;
    std::string out_dir = "out";

    void validate() const {
        grid.validate();
        phantom.validate();
        source_shift.validate();
        target_shift.validate();
        network.validate();
        train.validate();
        adapt.validate();
        weights.validate();
        require<ConfigError>(squeeze_factor >= 1, "ExperimentConfig.squeeze_factor: must be >= 1");
        require<ConfigError>(
            network.sr_factor == squeeze_factor,
            "ExperimentConfig.network.sr_factor: must equal squeeze_factor (got " +
                std::to_string(network.sr_factor) + " vs " + std::to_string(squeeze_factor) + ")");
        require<ConfigError>(grid.patch_shape.z % squeeze_factor == 0,
                             "ExperimentConfig.grid.patch_shape: axial extent must be divisible "
                             "by squeeze_factor");
        const i64 div = i64{1} << network.encoder_depth;
        require<ConfigError>(grid.patch_shape.x % div == 0 && grid.patch_shape.y % div == 0 &&
                                 grid.patch_shape.z % div == 0,
                             "ExperimentConfig.grid.patch_shape: must be divisible by "
                             "2^network.encoder_depth");
        require<ConfigError>(network.num_classes == phantom.num_organs + 1,
                             "ExperimentConfig.network.num_classes: must equal phantom organs+1");
        validate_learnable(phantom, source_shift);
        validate_learnable(phantom, target_shift);
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"grid", c.grid},
         {"squeeze_factor", c.squeeze_factor},
         {"phantom_spec", c.phantom},
         {"source_shift", c.source_shift},
         {"target_shift", c.target_shift},
         {"network", c.network},
         {"train", c.train},
         {"adapt", c.adapt},
         {"loss_weights", c.weights},
         {"seed", c.seed},
         {"out_dir", c.out_dir}};
}

namespace detail {
// A sub-config may be given inline or as {"file": "path.json"} / "path.json".
inline nlohmann::json resolve_ref(const nlohmann::json& j, const std::string& field,
                                  const fs::path& base_dir) {
    if (!j.contains(field)) return nlohmann::json::object();
    const auto& v = j.at(field);
    fs::path ref;
    if (v.is_string()) ref = v.get<std::string>();
    else if (v.is_object() && v.contains("file")) ref = v.at("file").get<std::string>();
    else return v;
    if (ref.is_relative()) ref = base_dir / ref;
    require<ConfigError>(fs::exists(ref),
                         "ExperimentConfig." + field + ": referenced file does not exist: " +
                             ref.string());
    return read_json_file(ref);
}
}  // namespace detail

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    const nlohmann::json j = read_json_file(path);
    const fs::path base = path.parent_path();
    ExperimentConfig c;
    if (j.contains("grid")) c.grid = j.at("grid").get<PatchGrid>();
    c.squeeze_factor = j.value("squeeze_factor", c.squeeze_factor);
    c.phantom = detail::resolve_ref(j, "phantom_spec", base).get<PhantomSpec>();
    c.source_shift = detail::resolve_ref(j, "source_shift", base).get<DomainShift>();
    if (j.contains("target_shift"))
        c.target_shift = detail::resolve_ref(j, "target_shift", base).get<DomainShift>();
    if (j.contains("network")) c.network = j.at("network").get<NetworkConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("adapt")) c.adapt = j.at("adapt").get<AdaptConfig>();
    if (j.contains("loss_weights")) c.weights = j.at("loss_weights").get<LossWeights>();
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.validate();
    return c;
}

/// Every run directory gets the fully resolved config it was produced by.
inline void write_config_echo(const fs::path& dir, const nlohmann::json& resolved) {
    fs::create_directories(dir);
    write_json_file(dir / "config_echo.json", resolved);
}

// ---------------------------------------------------------------------------
// Dataset directory layout: case volumes/masks in the portable raw format plus
// manifest.json.
// ---------------------------------------------------------------------------

inline void save_dataset(const DomainDataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    Manifest manifest;
    for (std::size_t i = 0; i < ds.cases.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "%s_%03zu", ds.domain.c_str(), i);
        const std::string vol_base = std::string(id) + "_vol";
        const std::string mask_base = std::string(id) + "_mask";
        save_volume(ds.cases[i].volume, dir / vol_base);
        save_mask(ds.cases[i].mask, dir / mask_base);
        manifest.cases.push_back(CaseEntry{id, vol_base + ".raw", mask_base + ".raw", ds.domain,
                                           i < ds.seeds.size() ? ds.seeds[i] : 0});
    }
    save_manifest(manifest, dir / "manifest.json");
}

struct LoadedDataset {
    std::vector<CaseData> cases;
    std::vector<std::string> ids;
    std::vector<std::string> domains;
};

inline LoadedDataset load_dataset(const fs::path& manifest_path) {
    const fs::path mf =
        fs::is_directory(manifest_path) ? manifest_path / "manifest.json" : manifest_path;
    const Manifest manifest = load_manifest(mf);
    LoadedDataset ds;
    for (const auto& e : manifest.cases) {
        ds.cases.push_back(CaseData{load_volume(e.volume), load_mask(e.mask)});
        ds.ids.push_back(e.id);
        ds.domains.push_back(e.domain);
    }
    return ds;
}

}  // namespace darr
