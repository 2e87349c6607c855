#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "darr/common.hpp"
#include "darr/volume.hpp"

namespace darr {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Portable volume format: <base>.raw holds the little-endian payload in
// x-fastest order, <base>.json is the sidecar with shape/spacing/dtype.
// ---------------------------------------------------------------------------

inline void write_file_bytes(const fs::path& path, const void* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    require<ConfigError>(out.good(), "cannot open for write: " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    require<ConfigError>(out.good(), "write failed: " + path.string());
}

inline std::vector<char> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    require<ConfigError>(in.good(), "cannot open: " + path.string());
    const auto n = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<char> buf(n);
    in.read(buf.data(), static_cast<std::streamsize>(n));
    require<ConfigError>(in.good(), "read failed: " + path.string());
    return buf;
}

inline void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    require<ConfigError>(out.good(), "cannot open for write: " + path.string());
    out << j.dump(2) << "\n";
}

inline json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    require<ConfigError>(in.good(), "cannot open: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

static_assert(std::endian::native == std::endian::little,
              "raw volume I/O assumes a little-endian host");

inline void save_volume(const Volume& vol, const fs::path& base) {
    vol.validate_meta();
    write_file_bytes(fs::path(base.string() + ".raw"), vol.data.data(),
                     vol.data.size() * sizeof(float));
    write_json_file(fs::path(base.string() + ".json"),
                    json{{"dtype", "float32"},
                         {"shape", {vol.shape.x, vol.shape.y, vol.shape.z}},
                         {"spacing_mm", {vol.spacing.x, vol.spacing.y, vol.spacing.z}},
                         {"order", "x-fastest"}});
}

inline void save_mask(const SegmentationMask& mask, const fs::path& base) {
    write_file_bytes(fs::path(base.string() + ".raw"), mask.labels.data(),
                     mask.labels.size() * sizeof(u16));
    write_json_file(fs::path(base.string() + ".json"),
                    json{{"dtype", "uint16"},
                         {"shape", {mask.shape.x, mask.shape.y, mask.shape.z}},
                         {"num_classes", mask.num_classes},
                         {"order", "x-fastest"}});
}

namespace detail {
inline fs::path sidecar_base(const fs::path& path) {
    std::string s = path.string();
    for (const char* ext : {".json", ".raw"})
        if (s.size() > std::strlen(ext) && s.ends_with(ext))
            return fs::path(s.substr(0, s.size() - std::strlen(ext)));
    return path;
}
}  // namespace detail

inline Volume load_volume(const fs::path& path) {
    const fs::path base = detail::sidecar_base(path);
    const json meta = read_json_file(fs::path(base.string() + ".json"));
    require<ConfigError>(meta.value("dtype", "") == "float32",
                         "load_volume: expected dtype float32 in " + base.string() + ".json");
    Volume vol;
    vol.shape = {meta["shape"][0].get<i64>(), meta["shape"][1].get<i64>(),
                 meta["shape"][2].get<i64>()};
    auto sp = meta.value("spacing_mm", std::vector<double>{1, 1, 1});
    vol.spacing = {sp[0], sp[1], sp[2]};
    auto bytes = read_file_bytes(fs::path(base.string() + ".raw"));
    require<SizeError>(bytes.size() == static_cast<std::size_t>(vol.shape.count()) * sizeof(float),
                       "load_volume: raw payload size mismatch for " + base.string());
    vol.data.resize(static_cast<std::size_t>(vol.shape.count()));
    std::memcpy(vol.data.data(), bytes.data(), bytes.size());
    vol.validate();
    return vol;
}

inline SegmentationMask load_mask(const fs::path& path) {
    const fs::path base = detail::sidecar_base(path);
    const json meta = read_json_file(fs::path(base.string() + ".json"));
    require<ConfigError>(meta.value("dtype", "") == "uint16",
                         "load_mask: expected dtype uint16 in " + base.string() + ".json");
    SegmentationMask mask;
    mask.shape = {meta["shape"][0].get<i64>(), meta["shape"][1].get<i64>(),
                  meta["shape"][2].get<i64>()};
    mask.num_classes = meta.value("num_classes", 2);
    auto bytes = read_file_bytes(fs::path(base.string() + ".raw"));
    require<SizeError>(bytes.size() == static_cast<std::size_t>(mask.shape.count()) * sizeof(u16),
                       "load_mask: raw payload size mismatch for " + base.string());
    mask.labels.resize(static_cast<std::size_t>(mask.shape.count()));
    std::memcpy(mask.labels.data(), bytes.data(), bytes.size());
    mask.validate();
    return mask;
}

// ---------------------------------------------------------------------------
// NIfTI-1 importer (.nii / .nii.gz). Scalar 3D images only; scl_slope/inter
// applied when set. Byte-swapped files are handled.
// ---------------------------------------------------------------------------

inline Volume load_nifti(const fs::path& path) {
    // Read (possibly gzipped) payload via zlib, which also accepts plain files.
    gzFile f = gzopen(path.string().c_str(), "rb");
    require<ConfigError>(f != nullptr, "cannot open: " + path.string());
    std::vector<char> bytes;
    char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0)
        bytes.insert(bytes.end(), chunk, chunk + n);
    gzclose(f);
    require<ConfigError>(bytes.size() >= 352, "not a NIfTI-1 file (too small): " + path.string());

    auto rd_i32 = [&](std::size_t off) {
        std::int32_t v;
        std::memcpy(&v, bytes.data() + off, 4);
        return v;
    };
    auto rd_i16 = [&](std::size_t off) {
        std::int16_t v;
        std::memcpy(&v, bytes.data() + off, 2);
        return v;
    };
    auto rd_f32 = [&](std::size_t off) {
        float v;
        std::memcpy(&v, bytes.data() + off, 4);
        return v;
    };
    auto bswap16 = [](std::int16_t v) {
        return static_cast<std::int16_t>(((v & 0xff) << 8) | ((v >> 8) & 0xff));
    };
    auto bswap32 = [](std::uint32_t v) {
        return (v << 24) | ((v << 8) & 0x00ff0000u) | ((v >> 8) & 0x0000ff00u) | (v >> 24);
    };

    bool swapped = false;
    std::int32_t sizeof_hdr = rd_i32(0);
    if (sizeof_hdr != 348) {
        sizeof_hdr = static_cast<std::int32_t>(bswap32(static_cast<std::uint32_t>(sizeof_hdr)));
        require<ConfigError>(sizeof_hdr == 348, "not a NIfTI-1 file: " + path.string());
        swapped = true;
    }
    const char* magic = bytes.data() + 344;
    require<ConfigError>(std::strncmp(magic, "n+1", 3) == 0 || std::strncmp(magic, "ni1", 3) == 0,
                         "missing NIfTI-1 magic: " + path.string());

    auto get_i16 = [&](std::size_t off) {
        std::int16_t v = rd_i16(off);
        return swapped ? bswap16(v) : v;
    };
    auto get_f32 = [&](std::size_t off) {
        float v = rd_f32(off);
        if (!swapped) return v;
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u = bswap32(u);
        std::memcpy(&v, &u, 4);
        return v;
    };

    const int ndim = get_i16(40);
    require<ConfigError>(ndim >= 3, "load_nifti: need a 3D image, dim[0]=" + std::to_string(ndim));
    Vec3i shape{get_i16(42), get_i16(44), get_i16(46)};
    for (int d = 4; d <= ndim && d < 8; ++d)
        require<ConfigError>(get_i16(static_cast<std::size_t>(40 + 2 * d)) <= 1,
                             "load_nifti: only scalar 3D images are supported");
    const int datatype = get_i16(70);
    Vec3d spacing{get_f32(80), get_f32(84), get_f32(88)};
    if (spacing.x <= 0) spacing.x = 1;
    if (spacing.y <= 0) spacing.y = 1;
    if (spacing.z <= 0) spacing.z = 1;
    float slope = get_f32(112);
    float inter = get_f32(116);
    if (slope == 0.f) {
        slope = 1.f;
        inter = 0.f;
    }
    const auto offset = static_cast<std::size_t>(get_f32(108));
    const std::size_t nvox = static_cast<std::size_t>(shape.count());

    Volume vol(shape, spacing);
    auto fill = [&]<class S>(S) {
        require<SizeError>(bytes.size() >= offset + nvox * sizeof(S),
                           "load_nifti: truncated payload in " + path.string());
        const char* p = bytes.data() + offset;
        for (std::size_t i = 0; i < nvox; ++i) {
            S raw;
            std::memcpy(&raw, p + i * sizeof(S), sizeof(S));
            if (swapped && sizeof(S) > 1) {
                if constexpr (sizeof(S) == 2) {
                    std::uint16_t u;
                    std::memcpy(&u, &raw, 2);
                    u = static_cast<std::uint16_t>((u << 8) | (u >> 8));
                    std::memcpy(&raw, &u, 2);
                } else if constexpr (sizeof(S) == 4) {
                    std::uint32_t u;
                    std::memcpy(&u, &raw, 4);
                    u = bswap32(u);
                    std::memcpy(&raw, &u, 4);
                } else {
                    std::uint64_t u;
                    std::memcpy(&u, &raw, 8);
                    u = (static_cast<std::uint64_t>(bswap32(static_cast<std::uint32_t>(u))) << 32) |
                        bswap32(static_cast<std::uint32_t>(u >> 32));
                    std::memcpy(&raw, &u, 8);
                }
            }
            vol.data[i] = static_cast<float>(raw) * slope + inter;
        }
    };
    switch (datatype) {
        case 2: fill(u8{}); break;            // DT_UINT8
        case 4: fill(std::int16_t{}); break;  // DT_INT16
        case 8: fill(std::int32_t{}); break;  // DT_INT32
        case 16: fill(float{}); break;        // DT_FLOAT32
        case 64: fill(double{}); break;       // DT_FLOAT64
        case 512: fill(u16{}); break;         // DT_UINT16
        default:
            throw ConfigError("load_nifti: unsupported datatype " + std::to_string(datatype));
    }
    vol.validate();
    return vol;
}

// ---------------------------------------------------------------------------
// Dataset manifest: case id, volume path, mask path, domain tag, seed.
// Paths are stored relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct CaseEntry {
    std::string id;
    fs::path volume;
    fs::path mask;
    std::string domain;
    u64 seed = 0;
};

struct Manifest {
    std::vector<CaseEntry> cases;
};

inline void save_manifest(const Manifest& m, const fs::path& path) {
    json cases = json::array();
    for (const auto& c : m.cases)
        cases.push_back(json{{"id", c.id},
                             {"volume", c.volume.string()},
                             {"mask", c.mask.string()},
                             {"domain", c.domain},
                             {"seed", c.seed}});
    write_json_file(path, json{{"format", "darr-manifest-v1"}, {"cases", cases}});
}

inline Manifest load_manifest(const fs::path& path) {
    const json j = read_json_file(path);
    require<ConfigError>(j.value("format", "") == "darr-manifest-v1",
                         "unrecognized manifest format in " + path.string());
    Manifest m;
    const fs::path dir = path.parent_path();
    for (const auto& c : j.at("cases")) {
        CaseEntry e;
        e.id = c.at("id").get<std::string>();
        e.volume = dir / c.at("volume").get<std::string>();
        e.mask = dir / c.at("mask").get<std::string>();
        e.domain = c.value("domain", "");
        e.seed = c.value("seed", u64{0});
        m.cases.push_back(std::move(e));
    }
    require<ConfigError>(!m.cases.empty(), "manifest has no cases: " + path.string());
    return m;
}

}  // namespace darr
