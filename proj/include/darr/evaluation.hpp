#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "darr/common.hpp"
#include "darr/volume.hpp"

namespace darr {

/// Dice-Sorensen coefficient for one class: 2|P∩G| / (|P|+|G|).
/// Both sets empty counts as a correct absence, i.e. 1.0.
inline double dice(const SegmentationMask& pred, const SegmentationMask& gt, int organ) {
    require<ShapeError>(pred.shape == gt.shape, "dice: shape mismatch");
    i64 inter = 0, p_count = 0, g_count = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool in_p = pred.labels[i] == organ;
        const bool in_g = gt.labels[i] == organ;
        p_count += in_p;
        g_count += in_g;
        inter += in_p && in_g;
    }
    if (p_count + g_count == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p_count + g_count);
}

/// Per-organ voxel-occurrence distribution over grid cells. Organs with no
/// voxels are flagged absent rather than given a bogus distribution.
struct OrganLocationHistogram {
    int num_organs = 0;                            // organs 1..K
    std::vector<std::vector<double>> probs;        // [organ-1][cell], sums to 1
    std::vector<bool> absent;                      // per organ
    std::vector<i64> voxel_counts;                 // raw counts per organ
};

inline OrganLocationHistogram organ_location_histogram(const SegmentationMask& mask,
                                                       const PatchGrid& grid) {
    grid.validate();
    const SegmentationMask* src = &mask;
    SegmentationMask resampled;
    if (mask.shape != grid.full_shape()) {
        resampled = resample_nearest(mask, grid.full_shape());
        src = &resampled;
    }
    const int organs = mask.num_classes - 1;
    const i64 cells = grid.cells();
    OrganLocationHistogram h;
    h.num_organs = organs;
    h.probs.assign(static_cast<std::size_t>(organs),
                   std::vector<double>(static_cast<std::size_t>(cells), 0.0));
    h.absent.assign(static_cast<std::size_t>(organs), true);
    h.voxel_counts.assign(static_cast<std::size_t>(organs), 0);
    const Vec3i ps = grid.patch_shape;
    for (i64 z = 0; z < src->shape.z; ++z)
        for (i64 y = 0; y < src->shape.y; ++y)
            for (i64 x = 0; x < src->shape.x; ++x) {
                const u16 v = src->at(x, y, z);
                if (v == 0) continue;
                const i64 cell = row_major_label(x / ps.x, y / ps.y, z / ps.z, grid.w, grid.h);
                h.probs[static_cast<std::size_t>(v - 1)][static_cast<std::size_t>(cell)] += 1.0;
                ++h.voxel_counts[static_cast<std::size_t>(v - 1)];
            }
    for (int k = 0; k < organs; ++k) {
        if (h.voxel_counts[static_cast<std::size_t>(k)] == 0) continue;
        h.absent[static_cast<std::size_t>(k)] = false;
        const double inv = 1.0 / static_cast<double>(h.voxel_counts[static_cast<std::size_t>(k)]);
        for (auto& p : h.probs[static_cast<std::size_t>(k)]) p *= inv;
    }
    return h;
}

/// Jensen-Shannon divergence with natural log and 0*log0 := 0.
/// Symmetric, non-negative, bounded by ln 2.
inline double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    require<DomainError>(p.size() == q.size(), "js_divergence: length mismatch");
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        require<DomainError>(p[i] >= 0 && q[i] >= 0, "js_divergence: negative mass");
        sp += p[i];
        sq += q[i];
    }
    require<DomainError>(std::abs(sp - 1.0) <= 1e-6 && std::abs(sq - 1.0) <= 1e-6,
                         "js_divergence: inputs must sum to 1 within 1e-6");
    auto kl_to_m = [&](const std::vector<double>& a) {
        double acc = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] <= 0) continue;
            const double m = 0.5 * (p[i] + q[i]);
            acc += a[i] * std::log(a[i] / m);
        }
        return acc;
    };
    return 0.5 * kl_to_m(p) + 0.5 * kl_to_m(q);
}

/// Dataset-level organ histograms: voxel counts pooled over all cases, then
/// normalized (absent organs flagged).
inline OrganLocationHistogram aggregate_histogram(const std::vector<SegmentationMask>& masks,
                                                  const PatchGrid& grid) {
    require<DomainError>(!masks.empty(), "aggregate_histogram: empty dataset");
    OrganLocationHistogram agg;
    bool first = true;
    for (const auto& m : masks) {
        OrganLocationHistogram h = organ_location_histogram(m, grid);
        if (first) {
            agg = h;
            // back to raw counts for pooling
            for (int k = 0; k < agg.num_organs; ++k)
                for (auto& p : agg.probs[static_cast<std::size_t>(k)])
                    p *= static_cast<double>(agg.voxel_counts[static_cast<std::size_t>(k)]);
            first = false;
            continue;
        }
        require<DomainError>(h.num_organs == agg.num_organs,
                             "aggregate_histogram: organ labeling mismatch");
        for (int k = 0; k < agg.num_organs; ++k) {
            for (std::size_t c = 0; c < h.probs[static_cast<std::size_t>(k)].size(); ++c)
                agg.probs[static_cast<std::size_t>(k)][c] +=
                    h.probs[static_cast<std::size_t>(k)][c] *
                    static_cast<double>(h.voxel_counts[static_cast<std::size_t>(k)]);
            agg.voxel_counts[static_cast<std::size_t>(k)] +=
                h.voxel_counts[static_cast<std::size_t>(k)];
        }
    }
    for (int k = 0; k < agg.num_organs; ++k) {
        agg.absent[static_cast<std::size_t>(k)] =
            agg.voxel_counts[static_cast<std::size_t>(k)] == 0;
        if (agg.absent[static_cast<std::size_t>(k)]) continue;
        const double inv = 1.0 / static_cast<double>(agg.voxel_counts[static_cast<std::size_t>(k)]);
        for (auto& p : agg.probs[static_cast<std::size_t>(k)]) p *= inv;
    }
    return agg;
}

/// K x K matrix of JSD(organ i in A, organ j in B) between dataset-level
/// histograms; entries with an absent organ are NaN ("undefined").
struct JsdMatrix {
    int organs = 0;
    std::vector<double> values;  // row-major, NaN = undefined

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * organs + j]; }
};

inline JsdMatrix jsd_matrix(const std::vector<SegmentationMask>& dataset_a,
                            const std::vector<SegmentationMask>& dataset_b,
                            const PatchGrid& grid) {
    const OrganLocationHistogram ha = aggregate_histogram(dataset_a, grid);
    const OrganLocationHistogram hb = aggregate_histogram(dataset_b, grid);
    require<DomainError>(ha.num_organs == hb.num_organs, "jsd_matrix: organ labeling mismatch");
    JsdMatrix m;
    m.organs = ha.num_organs;
    m.values.assign(static_cast<std::size_t>(m.organs) * m.organs,
                    std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < m.organs; ++i)
        for (int j = 0; j < m.organs; ++j) {
            if (ha.absent[static_cast<std::size_t>(i)] || hb.absent[static_cast<std::size_t>(j)])
                continue;
            m.values[static_cast<std::size_t>(i) * m.organs + j] = js_divergence(
                ha.probs[static_cast<std::size_t>(i)], hb.probs[static_cast<std::size_t>(j)]);
        }
    return m;
}

inline void to_json(nlohmann::json& j, const JsdMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.organs; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int k = 0; k < m.organs; ++k) {
            const double v = m.at(i, k);
            if (std::isnan(v)) row.push_back(nullptr);
            else row.push_back(v);
        }
        rows.push_back(row);
    }
    j = {{"organs", m.organs}, {"values", rows}};
}
inline void from_json(const nlohmann::json& j, JsdMatrix& m) {
    m.organs = j.at("organs").get<int>();
    m.values.clear();
    for (const auto& row : j.at("values"))
        for (const auto& v : row)
            m.values.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                           : v.get<double>());
}

// ---------------------------------------------------------------------------
// Experiment report: per-case per-organ DSC per variant, variant means,
// adaptation traces, config echo.
// ---------------------------------------------------------------------------

struct CaseResult {
    std::string case_id;
    std::vector<double> organ_dsc;  // index k -> organ k+1
    bool adapted = false;
    bool fallback = false;
    double puzzle_loss_before = std::numeric_limits<double>::quiet_NaN();
    double puzzle_loss_after = std::numeric_limits<double>::quiet_NaN();

    double mean_dsc() const {
        double s = 0;
        for (double d : organ_dsc) s += d;
        return organ_dsc.empty() ? 0.0 : s / static_cast<double>(organ_dsc.size());
    }
};

struct VariantResult {
    std::string variant;
    std::vector<CaseResult> cases;

    double mean_dsc() const {
        double s = 0;
        for (const auto& c : cases) s += c.mean_dsc();
        return cases.empty() ? 0.0 : s / static_cast<double>(cases.size());
    }

    double mean_organ_dsc(int organ_index) const {
        double s = 0;
        for (const auto& c : cases) s += c.organ_dsc[static_cast<std::size_t>(organ_index)];
        return cases.empty() ? 0.0 : s / static_cast<double>(cases.size());
    }
};

struct ExperimentReport {
    std::vector<VariantResult> variants;
    std::optional<JsdMatrix> jsd;
    nlohmann::json config_echo;

    const VariantResult* find(const std::string& name) const {
        for (const auto& v : variants)
            if (v.variant == name) return &v;
        return nullptr;
    }
};

inline void to_json(nlohmann::json& j, const CaseResult& c) {
    j = {{"case_id", c.case_id},
         {"organ_dsc", c.organ_dsc},
         {"mean_dsc", c.mean_dsc()},
         {"adapted", c.adapted},
         {"fallback", c.fallback}};
    if (!std::isnan(c.puzzle_loss_before)) j["puzzle_loss_before"] = c.puzzle_loss_before;
    if (!std::isnan(c.puzzle_loss_after)) j["puzzle_loss_after"] = c.puzzle_loss_after;
}
inline void from_json(const nlohmann::json& j, CaseResult& c) {
    c.case_id = j.at("case_id").get<std::string>();
    c.organ_dsc = j.at("organ_dsc").get<std::vector<double>>();
    c.adapted = j.value("adapted", false);
    c.fallback = j.value("fallback", false);
    c.puzzle_loss_before =
        j.value("puzzle_loss_before", std::numeric_limits<double>::quiet_NaN());
    c.puzzle_loss_after = j.value("puzzle_loss_after", std::numeric_limits<double>::quiet_NaN());
}
inline void to_json(nlohmann::json& j, const VariantResult& v) {
    j = {{"variant", v.variant}, {"cases", v.cases}, {"mean_dsc", v.mean_dsc()}};
}
inline void from_json(const nlohmann::json& j, VariantResult& v) {
    v.variant = j.at("variant").get<std::string>();
    v.cases = j.at("cases").get<std::vector<CaseResult>>();
}
inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
    j = {{"variants", r.variants}, {"config", r.config_echo}};
    if (r.jsd) j["jsd_matrix"] = *r.jsd;
}
inline void from_json(const nlohmann::json& j, ExperimentReport& r) {
    r.variants = j.at("variants").get<std::vector<VariantResult>>();
    r.config_echo = j.value("config", nlohmann::json{});
    if (j.contains("jsd_matrix")) r.jsd = j.at("jsd_matrix").get<JsdMatrix>();
}

/// Delimited table (TSV): variant, case, per-organ DSC columns, mean.
inline std::string report_table_tsv(const ExperimentReport& r) {
    std::string out = "variant\tcase";
    int organs = 0;
    if (!r.variants.empty() && !r.variants[0].cases.empty())
        organs = static_cast<int>(r.variants[0].cases[0].organ_dsc.size());
    for (int k = 1; k <= organs; ++k) out += "\torgan" + std::to_string(k);
    out += "\tmean\n";
    char buf[64];
    for (const auto& v : r.variants) {
        for (const auto& c : v.cases) {
            out += v.variant + "\t" + c.case_id;
            for (double d : c.organ_dsc) {
                std::snprintf(buf, sizeof(buf), "\t%.4f", d);
                out += buf;
            }
            std::snprintf(buf, sizeof(buf), "\t%.4f\n", c.mean_dsc());
            out += buf;
        }
        out += v.variant + "\tMEAN";
        for (int k = 0; k < organs; ++k) {
            std::snprintf(buf, sizeof(buf), "\t%.4f", v.mean_organ_dsc(k));
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "\t%.4f\n", v.mean_dsc());
        out += buf;
    }
    return out;
}

}  // namespace darr
