#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "darr/io.hpp"
#include "darr/nn/layers.hpp"
#include "darr/nn/optim.hpp"
#include "darr/nn/tensor.hpp"
#include "darr/rng.hpp"

namespace darr {

struct NetworkConfig {
    int encoder_depth = 2;
    std::vector<int> encoder_widths = {8, 16, 32};  // stem + one per stage
    std::vector<int> decoder_widths = {};           // empty mirrors the encoder
    int num_classes = 9;
    int sr_factor = 4;  // must equal the pipeline squeeze factor
    int sr_width = 8;
    int sr_blocks = 2;
    int puzzle_hidden = 128;
    bool puzzle_raw_flatten = false;
    bool use_sr = true;
    bool use_puzzle = true;

    void validate() const {
        require<ConfigError>(encoder_depth >= 1, "NetworkConfig: encoder_depth must be >= 1");
        require<ConfigError>(static_cast<int>(encoder_widths.size()) == encoder_depth + 1,
                             "NetworkConfig: encoder_widths must have encoder_depth+1 entries");
        require<ConfigError>(decoder_widths.empty() ||
                                 decoder_widths.size() == encoder_widths.size(),
                             "NetworkConfig: decoder_widths must be empty or mirror encoder");
        for (int w : encoder_widths)
            require<ConfigError>(w >= 1, "NetworkConfig: widths must be >= 1");
        require<ConfigError>(num_classes >= 2, "NetworkConfig: num_classes must be >= 2");
        require<ConfigError>(sr_factor >= 1, "NetworkConfig: sr_factor must be >= 1");
        require<ConfigError>(sr_width >= 1 && sr_blocks >= 0, "NetworkConfig: bad SR trunk");
        require<ConfigError>(puzzle_hidden >= 1, "NetworkConfig: puzzle_hidden must be >= 1");
    }

    std::vector<int> effective_decoder_widths() const {
        return decoder_widths.empty() ? encoder_widths : decoder_widths;
    }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = {{"encoder_depth", c.encoder_depth},
         {"encoder_widths", c.encoder_widths},
         {"decoder_widths", c.decoder_widths},
         {"num_classes", c.num_classes},
         {"sr_factor", c.sr_factor},
         {"sr_width", c.sr_width},
         {"sr_blocks", c.sr_blocks},
         {"puzzle_hidden", c.puzzle_hidden},
         {"puzzle_raw_flatten", c.puzzle_raw_flatten},
         {"use_sr", c.use_sr},
         {"use_puzzle", c.use_puzzle}};
}
inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
    const NetworkConfig d;
    c.encoder_depth = j.value("encoder_depth", d.encoder_depth);
    c.encoder_widths = j.value("encoder_widths", d.encoder_widths);
    c.decoder_widths = j.value("decoder_widths", d.decoder_widths);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.sr_factor = j.value("sr_factor", d.sr_factor);
    c.sr_width = j.value("sr_width", d.sr_width);
    c.sr_blocks = j.value("sr_blocks", d.sr_blocks);
    c.puzzle_hidden = j.value("puzzle_hidden", d.puzzle_hidden);
    c.puzzle_raw_flatten = j.value("puzzle_raw_flatten", d.puzzle_raw_flatten);
    c.use_sr = j.value("use_sr", d.use_sr);
    c.use_puzzle = j.value("use_puzzle", d.use_puzzle);
}

// ---------------------------------------------------------------------------
// Super-resolution network: residual conv trunk (no normalization) plus a
// single subpixel upsampling stage on the axial axis, with a fixed linear
// upsample of the input as global skip.
// ---------------------------------------------------------------------------
template <class T>
struct SrNet {
    int factor = 4;
    nn::LinearUpsampleZ<T> up_skip;
    nn::Conv3d<T> conv_in;
    nn::ReLU<T> act_in;
    std::vector<nn::Conv3d<T>> trunk;
    std::vector<nn::ReLU<T>> trunk_act;
    nn::Conv3d<T> conv_out;
    nn::AxialPixelShuffle<T> shuffle;

    SrNet() = default;
    SrNet(const NetworkConfig& cfg)
        : factor(cfg.sr_factor),
          up_skip(cfg.sr_factor),
          conv_in("sr.in", 1, cfg.sr_width, 3, 1, 1),
          conv_out("sr.out", cfg.sr_width, cfg.sr_factor, 3, 1, 1),
          shuffle(cfg.sr_factor) {
        for (int b = 0; b < cfg.sr_blocks; ++b) {
            trunk.emplace_back("sr.trunk" + std::to_string(b), cfg.sr_width, cfg.sr_width, 3, 1, 1);
            trunk_act.emplace_back();
        }
    }

    void init(Rng& rng) {
        conv_in.init(rng);
        for (auto& c : trunk) c.init(rng);
        conv_out.init(rng);
    }

    void collect(std::vector<nn::Param<T>*>& out) {
        conv_in.collect(out);
        for (auto& c : trunk) c.collect(out);
        conv_out.collect(out);
    }

    nn::Feat<T> forward(const nn::Feat<T>& lowres) {
        require<ShapeError>(lowres.channels == 1, "SrNet: expects a single-channel patch");
        nn::Feat<T> skip = up_skip.forward(lowres);
        nn::Feat<T> t = act_in.forward(conv_in.forward(lowres));
        for (std::size_t b = 0; b < trunk.size(); ++b)
            t = trunk_act[b].forward(trunk[b].forward(t));
        nn::Feat<T> y = shuffle.forward(conv_out.forward(t));
        nn::add_into(y, skip);
        return y;
    }

    nn::Feat<T> backward(const nn::Feat<T>& gout) {
        nn::Feat<T> gt = conv_out.backward(shuffle.backward(gout));
        for (std::size_t b = trunk.size(); b-- > 0;)
            gt = trunk[b].backward(trunk_act[b].backward(gt));
        nn::Feat<T> gin = conv_in.backward(act_in.backward(gt));
        nn::add_into(gin, up_skip.backward(gout));
        return gin;
    }
};

// ---------------------------------------------------------------------------
// V-Net style encoder. The stem conv carries no normalization so that absolute
// intensity survives into the feature code; deeper stages use instance norm.
// ---------------------------------------------------------------------------
template <class T>
struct VnetEncoder {
    struct Stage {
        nn::Conv3d<T> down;
        nn::InstanceNorm<T> norm1;
        nn::ReLU<T> act1;
        nn::Conv3d<T> conv;
        nn::InstanceNorm<T> norm2;
        nn::ReLU<T> act2;
    };

    int depth = 0;
    nn::Conv3d<T> stem;
    nn::ReLU<T> stem_act;
    std::vector<Stage> stages;
    std::vector<nn::Feat<T>> skips_;  // x0 .. x_{depth-1}

    VnetEncoder() = default;
    VnetEncoder(const NetworkConfig& cfg)
        : depth(cfg.encoder_depth), stem("enc.stem", 1, cfg.encoder_widths[0], 3, 1, 1) {
        for (int d = 0; d < depth; ++d) {
            const int wi = cfg.encoder_widths[static_cast<std::size_t>(d)];
            const int wo = cfg.encoder_widths[static_cast<std::size_t>(d) + 1];
            const std::string base = "enc.s" + std::to_string(d);
            stages.push_back(Stage{nn::Conv3d<T>(base + ".down", wi, wo, 3, 2, 1),
                                   nn::InstanceNorm<T>(base + ".norm1", wo),
                                   nn::ReLU<T>{},
                                   nn::Conv3d<T>(base + ".conv", wo, wo, 3, 1, 1),
                                   nn::InstanceNorm<T>(base + ".norm2", wo),
                                   nn::ReLU<T>{}});
        }
    }

    void init(Rng& rng) {
        stem.init(rng);
        for (auto& s : stages) {
            s.down.init(rng);
            s.conv.init(rng);
        }
    }

    void collect(std::vector<nn::Param<T>*>& out) {
        stem.collect(out);
        for (auto& s : stages) {
            s.down.collect(out);
            s.norm1.collect(out);
            s.conv.collect(out);
            s.norm2.collect(out);
        }
    }

    nn::Feat<T> forward(const nn::Feat<T>& x) {
        const i64 div = i64{1} << depth;
        require<ShapeError>(x.shape.x % div == 0 && x.shape.y % div == 0 && x.shape.z % div == 0,
                            "VnetEncoder: patch extents must be divisible by 2^depth");
        skips_.clear();
        nn::Feat<T> h = stem_act.forward(stem.forward(x));
        skips_.push_back(h);
        for (int d = 0; d < depth; ++d) {
            auto& s = stages[static_cast<std::size_t>(d)];
            h = s.act1.forward(s.norm1.forward(s.down.forward(h)));
            h = s.act2.forward(s.norm2.forward(s.conv.forward(h)));
            if (d + 1 < depth) skips_.push_back(h);
        }
        return h;
    }

    // gskips may be null (e.g. the puzzle-only backward path).
    nn::Feat<T> backward(const nn::Feat<T>& gbottleneck, const std::vector<nn::Feat<T>>* gskips) {
        nn::Feat<T> g = gbottleneck;
        for (int d = depth - 1; d >= 0; --d) {
            auto& s = stages[static_cast<std::size_t>(d)];
            g = s.conv.backward(s.norm2.backward(s.act2.backward(g)));
            g = s.down.backward(s.norm1.backward(s.act1.backward(g)));
            if (gskips) nn::add_into(g, (*gskips)[static_cast<std::size_t>(d)]);
        }
        return stem.backward(stem_act.backward(g));
    }
};

// ---------------------------------------------------------------------------
// Decoder: mirrors the encoder with nearest-up + 1x1 projection, additive skip
// fusion, one 3x3x3 conv per scale, and a 1x1 classification head.
// ---------------------------------------------------------------------------
template <class T>
struct VnetDecoder {
    struct Up {
        nn::NearestUpsample2<T> up;
        nn::Conv3d<T> proj;
        nn::Conv3d<T> conv;
        nn::InstanceNorm<T> norm;
        nn::ReLU<T> act;
    };

    int depth = 0;
    std::vector<Up> ups;  // index i handles scale d = depth-1-i
    nn::Conv3d<T> head;

    VnetDecoder() = default;
    VnetDecoder(const NetworkConfig& cfg) : depth(cfg.encoder_depth) {
        const auto w = cfg.effective_decoder_widths();
        for (int d = depth - 1; d >= 0; --d) {
            const std::string base = "dec.u" + std::to_string(d);
            ups.push_back(
                Up{nn::NearestUpsample2<T>{},
                   nn::Conv3d<T>(base + ".proj", w[static_cast<std::size_t>(d) + 1],
                                 w[static_cast<std::size_t>(d)], 1, 1, 0),
                   nn::Conv3d<T>(base + ".conv", w[static_cast<std::size_t>(d)],
                                 w[static_cast<std::size_t>(d)], 3, 1, 1),
                   nn::InstanceNorm<T>(base + ".norm", w[static_cast<std::size_t>(d)]),
                   nn::ReLU<T>{}});
        }
        head = nn::Conv3d<T>("dec.head", w[0], cfg.num_classes, 1, 1, 0);
    }

    void init(Rng& rng) {
        for (auto& u : ups) {
            u.proj.init(rng);
            u.conv.init(rng);
        }
        head.init(rng);
    }

    void collect(std::vector<nn::Param<T>*>& out) {
        for (auto& u : ups) {
            u.proj.collect(out);
            u.conv.collect(out);
            u.norm.collect(out);
        }
        head.collect(out);
    }

    nn::Feat<T> forward(const nn::Feat<T>& bottleneck, const std::vector<nn::Feat<T>>& skips) {
        require<ShapeError>(static_cast<int>(skips.size()) == depth,
                            "VnetDecoder: expected one skip per scale");
        nn::Feat<T> h = bottleneck;
        for (int i = 0; i < depth; ++i) {
            const int d = depth - 1 - i;
            auto& u = ups[static_cast<std::size_t>(i)];
            h = u.proj.forward(u.up.forward(h));
            nn::add_into(h, skips[static_cast<std::size_t>(d)]);
            h = u.act.forward(u.norm.forward(u.conv.forward(h)));
        }
        return head.forward(h);
    }

    // Returns the bottleneck gradient; per-scale skip gradients land in gskips.
    nn::Feat<T> backward(const nn::Feat<T>& glogits, std::vector<nn::Feat<T>>& gskips) {
        gskips.assign(static_cast<std::size_t>(depth), nn::Feat<T>{});
        nn::Feat<T> g = head.backward(glogits);
        for (int i = depth - 1; i >= 0; --i) {
            const int d = depth - 1 - i;
            auto& u = ups[static_cast<std::size_t>(i)];
            g = u.conv.backward(u.norm.backward(u.act.backward(g)));
            gskips[static_cast<std::size_t>(d)] = g;
            g = u.up.backward(u.proj.backward(g));
        }
        return g;
    }
};

// ---------------------------------------------------------------------------
// Puzzle head: per-patch feature vectors concatenated in permuted order, two
// fully-connected layers to (WHL)^2 scores, then a softmax per row.
// ---------------------------------------------------------------------------
template <class T>
struct PuzzleHead {
    int n_cells = 0;
    int in_per_patch = 0;
    nn::Linear<T> fc1;
    nn::VecReLU<T> act;
    nn::Linear<T> fc2;
    std::vector<T> probs_;  // last row-stochastic output, row-major n x n

    PuzzleHead() = default;
    PuzzleHead(int n, int per_patch, int hidden)
        : n_cells(n),
          in_per_patch(per_patch),
          fc1("puzzle.fc1", n * per_patch, hidden),
          fc2("puzzle.fc2", hidden, n * n) {}

    void init(Rng& rng) {
        fc1.init(rng);
        fc2.init(rng);
    }

    void collect(std::vector<nn::Param<T>*>& out) {
        fc1.collect(out);
        fc2.collect(out);
    }

    /// Concatenated per-patch vectors -> n x n row-stochastic matrix; row a is
    /// the location distribution of the patch at permuted position a.
    std::vector<T> forward(const std::vector<T>& concat) {
        require<ShapeError>(static_cast<int>(concat.size()) == n_cells * in_per_patch,
                            "PuzzleHead: expected " + std::to_string(n_cells * in_per_patch) +
                                " inputs, got " + std::to_string(concat.size()));
        std::vector<T> scores = fc2.forward(act.forward(fc1.forward(concat)));
        probs_.assign(scores.size(), T(0));
        for (int a = 0; a < n_cells; ++a) {
            T* row = probs_.data() + static_cast<std::size_t>(a) * n_cells;
            const T* srow = scores.data() + static_cast<std::size_t>(a) * n_cells;
            T mx = srow[0];
            for (int j = 1; j < n_cells; ++j) mx = std::max(mx, srow[j]);
            T sum = 0;
            for (int j = 0; j < n_cells; ++j) {
                row[j] = std::exp(srow[j] - mx);
                sum += row[j];
            }
            for (int j = 0; j < n_cells; ++j) row[j] /= sum;
        }
        return probs_;
    }

    /// Backward from the gradient w.r.t. pre-softmax scores.
    std::vector<T> backward_scores(const std::vector<T>& gscores) {
        return fc1.backward(act.backward(fc2.backward(gscores)));
    }
};

// ---------------------------------------------------------------------------
// The four-group model.
// ---------------------------------------------------------------------------
template <class T>
struct DarrModel {
    NetworkConfig cfg;
    int n_cells = 0;
    Vec3i patch_shape;
    SrNet<T> sr;
    nn::LinearUpsampleZ<T> fixed_up;  // standardization path when SR is disabled
    VnetEncoder<T> encoder;
    VnetDecoder<T> decoder;
    PuzzleHead<T> puzzle;

    DarrModel() = default;
    DarrModel(const NetworkConfig& config, int cells, Vec3i patch, u64 seed)
        : cfg(config), n_cells(cells), patch_shape(patch), fixed_up(config.sr_factor) {
        cfg.validate();
        require<ConfigError>(n_cells >= 1, "DarrModel: need at least one puzzle cell");
        const i64 div = i64{1} << cfg.encoder_depth;
        require<ConfigError>(patch.x % div == 0 && patch.y % div == 0 && patch.z % div == 0,
                             "DarrModel: patch_shape must be divisible by 2^encoder_depth");
        require<ConfigError>(patch.z % cfg.sr_factor == 0,
                             "DarrModel: axial patch extent must be divisible by sr_factor");
        Rng rng(derive_seed(seed, 0xda22));
        if (cfg.use_sr) {
            sr = SrNet<T>(cfg);
            sr.init(rng);
        }
        encoder = VnetEncoder<T>(cfg);
        encoder.init(rng);
        decoder = VnetDecoder<T>(cfg);
        decoder.init(rng);
        if (cfg.use_puzzle) {
            puzzle = PuzzleHead<T>(n_cells, puzzle_in_per_patch(), cfg.puzzle_hidden);
            puzzle.init(rng);
        }
    }

    int puzzle_in_per_patch() const {
        const int c = cfg.encoder_widths.back();
        if (!cfg.puzzle_raw_flatten) return c;
        const i64 div = i64{1} << cfg.encoder_depth;
        const Vec3i bs{patch_shape.x / div, patch_shape.y / div, patch_shape.z / div};
        return static_cast<int>(c * bs.count());
    }

    Vec3i lowres_shape() const {
        return {patch_shape.x, patch_shape.y, patch_shape.z / cfg.sr_factor};
    }

    nn::Feat<T> standardize_forward(const nn::Feat<T>& lowres) {
        require<ShapeError>(lowres.shape == lowres_shape(),
                            "standardize: expected low-res patch " + to_string(lowres_shape()) +
                                ", got " + to_string(lowres.shape));
        return cfg.use_sr ? sr.forward(lowres) : fixed_up.forward(lowres);
    }

    nn::Feat<T> standardize_backward(const nn::Feat<T>& gout) {
        return cfg.use_sr ? sr.backward(gout) : fixed_up.backward(gout);
    }

    // Parameter groups. Orders are stable; optimizer state and checkpoints key
    // off them.
    std::vector<nn::Param<T>*> theta_sr() {
        std::vector<nn::Param<T>*> out;
        if (cfg.use_sr) sr.collect(out);
        return out;
    }
    std::vector<nn::Param<T>*> theta_en() {
        std::vector<nn::Param<T>*> out;
        encoder.collect(out);
        return out;
    }
    std::vector<nn::Param<T>*> theta_de() {
        std::vector<nn::Param<T>*> out;
        decoder.collect(out);
        return out;
    }
    std::vector<nn::Param<T>*> theta_p() {
        std::vector<nn::Param<T>*> out;
        if (cfg.use_puzzle) puzzle.collect(out);
        return out;
    }
    std::vector<nn::Param<T>*> all_params() {
        std::vector<nn::Param<T>*> out = theta_sr();
        for (auto* p : theta_en()) out.push_back(p);
        for (auto* p : theta_de()) out.push_back(p);
        for (auto* p : theta_p()) out.push_back(p);
        return out;
    }
    /// Exactly the argument list of the puzzle loss: the groups adaptation
    /// may update.
    std::vector<nn::Param<T>*> adapt_params() {
        std::vector<nn::Param<T>*> out = theta_sr();
        for (auto* p : theta_en()) out.push_back(p);
        for (auto* p : theta_p()) out.push_back(p);
        return out;
    }

    void zero_all_grads() { nn::zero_grads(all_params()); }

    void copy_params_from(DarrModel<T>& src) {
        auto mine = all_params();
        auto theirs = src.all_params();
        require<IntegrityError>(mine.size() == theirs.size(),
                                "copy_params_from: model structure mismatch");
        for (std::size_t i = 0; i < mine.size(); ++i) {
            require<IntegrityError>(mine[i]->w.size() == theirs[i]->w.size(),
                                    "copy_params_from: tensor size mismatch");
            mine[i]->w = theirs[i]->w;
        }
    }

    u64 checksum() { return nn::params_checksum(all_params()); }
    u64 decoder_checksum() { return nn::params_checksum(theta_de()); }

    u64 config_fingerprint() const {
        nlohmann::json j = cfg;
        j["n_cells"] = n_cells;
        j["patch_shape"] = {patch_shape.x, patch_shape.y, patch_shape.z};
        const std::string s = j.dump();
        return fnv1a(s.data(), s.size());
    }
};

// ---------------------------------------------------------------------------
// Snapshot / restore: bitwise parameter copies guarded by a config fingerprint.
// ---------------------------------------------------------------------------
template <class T>
struct ParamSnapshot {
    u64 fingerprint = 0;
    std::vector<std::pair<std::string, std::vector<T>>> tensors;
};

template <class T>
inline ParamSnapshot<T> snapshot(DarrModel<T>& model) {
    ParamSnapshot<T> snap;
    snap.fingerprint = model.config_fingerprint();
    for (auto* p : model.all_params()) snap.tensors.emplace_back(p->name, p->w);
    return snap;
}

template <class T>
inline void restore(DarrModel<T>& model, const ParamSnapshot<T>& snap) {
    require<IntegrityError>(snap.fingerprint == model.config_fingerprint(),
                            "restore: snapshot was taken from a different configuration");
    auto params = model.all_params();
    require<IntegrityError>(params.size() == snap.tensors.size(),
                            "restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require<IntegrityError>(params[i]->name == snap.tensors[i].first &&
                                    params[i]->w.size() == snap.tensors[i].second.size(),
                                "restore: tensor mismatch at " + params[i]->name);
        params[i]->w = snap.tensors[i].second;
    }
}

// ---------------------------------------------------------------------------
// Checkpoint file: versioned header, config echo, the four parameter groups,
// optimizer state and iteration counter.
// ---------------------------------------------------------------------------
namespace ckpt {

constexpr char kMagic[8] = {'D', 'A', 'R', 'R', 'C', 'K', 'P', '1'};

template <class T>
struct Contents {
    NetworkConfig cfg;
    int n_cells = 0;
    Vec3i patch_shape;
    u64 iteration = 0;
    nlohmann::json extra;  // run config echo
    std::shared_ptr<DarrModel<T>> model;
    std::optional<nn::Adam<T>> adam;
};

template <class T>
inline void save(const fs::path& path, DarrModel<T>& model, u64 iteration,
                 const nn::Adam<T>* adam = nullptr, const nlohmann::json& extra = {}) {
    std::ofstream out(path, std::ios::binary);
    require<ConfigError>(out.good(), "checkpoint: cannot open for write: " + path.string());
    out.write(kMagic, 8);
    const u32 scalar_bytes = sizeof(T);
    out.write(reinterpret_cast<const char*>(&scalar_bytes), 4);
    nlohmann::json hdr;
    hdr["network"] = model.cfg;
    hdr["n_cells"] = model.n_cells;
    hdr["patch_shape"] = {model.patch_shape.x, model.patch_shape.y, model.patch_shape.z};
    hdr["iteration"] = iteration;
    hdr["has_optimizer"] = adam != nullptr;
    hdr["extra"] = extra;
    const std::string hs = hdr.dump();
    const u64 hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto params = model.all_params();
    const u64 np = params.size();
    out.write(reinterpret_cast<const char*>(&np), 8);
    auto write_vec = [&](const std::vector<T>& v) {
        const u64 n = v.size();
        out.write(reinterpret_cast<const char*>(&n), 8);
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(n * sizeof(T)));
    };
    for (auto* p : params) {
        const u64 nl = p->name.size();
        out.write(reinterpret_cast<const char*>(&nl), 8);
        out.write(p->name.data(), static_cast<std::streamsize>(nl));
        write_vec(p->w);
    }
    if (adam) {
        out.write(reinterpret_cast<const char*>(&adam->t), 8);
        for (std::size_t k = 0; k < params.size(); ++k) {
            write_vec(adam->m[k]);
            write_vec(adam->v[k]);
        }
    }
    require<ConfigError>(out.good(), "checkpoint: write failed: " + path.string());
}

template <class T>
inline Contents<T> load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require<ConfigError>(in.good(), "checkpoint: cannot open: " + path.string());
    char magic[8];
    in.read(magic, 8);
    require<IntegrityError>(in.good() && std::memcmp(magic, kMagic, 8) == 0,
                            "checkpoint: bad magic in " + path.string());
    u32 scalar_bytes = 0;
    in.read(reinterpret_cast<char*>(&scalar_bytes), 4);
    require<IntegrityError>(scalar_bytes == sizeof(T),
                            "checkpoint: scalar width mismatch (file " +
                                std::to_string(scalar_bytes * 8) + "-bit, expected " +
                                std::to_string(sizeof(T) * 8) + "-bit)");
    u64 hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    require<IntegrityError>(in.good(), "checkpoint: truncated header");
    nlohmann::json hdr = nlohmann::json::parse(hs);

    Contents<T> c;
    c.cfg = hdr.at("network").get<NetworkConfig>();
    c.n_cells = hdr.at("n_cells").get<int>();
    auto ps = hdr.at("patch_shape");
    c.patch_shape = {ps[0].get<i64>(), ps[1].get<i64>(), ps[2].get<i64>()};
    c.iteration = hdr.at("iteration").get<u64>();
    c.extra = hdr.value("extra", nlohmann::json{});
    c.model = std::make_shared<DarrModel<T>>(c.cfg, c.n_cells, c.patch_shape, /*seed=*/0);

    u64 np = 0;
    in.read(reinterpret_cast<char*>(&np), 8);
    auto params = c.model->all_params();
    require<IntegrityError>(np == params.size(), "checkpoint: parameter count mismatch");
    auto read_vec = [&](std::vector<T>& v) {
        u64 n = 0;
        in.read(reinterpret_cast<char*>(&n), 8);
        require<IntegrityError>(in.good() && n == v.size(), "checkpoint: tensor size mismatch");
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    };
    for (auto* p : params) {
        u64 nl = 0;
        in.read(reinterpret_cast<char*>(&nl), 8);
        std::string name(nl, '\0');
        in.read(name.data(), static_cast<std::streamsize>(nl));
        require<IntegrityError>(in.good() && name == p->name,
                                "checkpoint: tensor name mismatch at " + p->name);
        read_vec(p->w);
    }
    if (hdr.value("has_optimizer", false)) {
        nn::Adam<T> adam(static_cast<T>(0));
        adam.ensure_state(params);
        in.read(reinterpret_cast<char*>(&adam.t), 8);
        for (std::size_t k = 0; k < params.size(); ++k) {
            read_vec(adam.m[k]);
            read_vec(adam.v[k]);
        }
        c.adam = std::move(adam);
    }
    require<IntegrityError>(in.good(), "checkpoint: truncated payload");
    return c;
}

}  // namespace ckpt

}  // namespace darr
