#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "darr/common.hpp"
#include "darr/evaluation.hpp"
#include "darr/io.hpp"

namespace darr::plot {

struct Rgb {
    u8 r = 0, g = 0, b = 0;
};

class Canvas {
public:
    Canvas(int w, int h, Rgb bg = {255, 255, 255}) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h, bg) {}

    int width() const { return w_; }
    int height() const { return h_; }

    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        px_[static_cast<std::size_t>(y) * w_ + x] = c;
    }

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = std::max(0, y0); y <= std::min(h_ - 1, y1); ++y)
            for (int x = std::max(0, x0); x <= std::min(w_ - 1, x1); ++x)
                px_[static_cast<std::size_t>(y) * w_ + x] = c;
    }

    void hline(int x0, int x1, int y, Rgb c) { fill_rect(x0, y, x1, y, c); }
    void vline(int x, int y0, int y1, Rgb c) { fill_rect(x, y0, x, y1, c); }

    void rect(int x0, int y0, int x1, int y1, Rgb c) {
        hline(x0, x1, y0, c);
        hline(x0, x1, y1, c);
        vline(x0, y0, y1, c);
        vline(x1, y0, y1, c);
    }

    void text(int x, int y, const std::string& s, Rgb c, int scale = 1);

    /// Minimal PNG (8-bit RGB, zlib-deflated, filter 0).
    void save_png(const fs::path& path) const {
        std::vector<u8> raw;
        raw.reserve(static_cast<std::size_t>(h_) * (1 + 3 * static_cast<std::size_t>(w_)));
        for (int y = 0; y < h_; ++y) {
            raw.push_back(0);
            for (int x = 0; x < w_; ++x) {
                const Rgb& p = px_[static_cast<std::size_t>(y) * w_ + x];
                raw.push_back(p.r);
                raw.push_back(p.g);
                raw.push_back(p.b);
            }
        }
        uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
        std::vector<u8> comp(comp_len);
        require<ConfigError>(
            compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK,
            "png: deflate failed");
        comp.resize(comp_len);

        std::vector<u8> out;
        const u8 sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
        out.insert(out.end(), sig, sig + 8);
        auto be32 = [](u32 v) {
            return std::array<u8, 4>{static_cast<u8>(v >> 24), static_cast<u8>(v >> 16),
                                     static_cast<u8>(v >> 8), static_cast<u8>(v)};
        };
        auto chunk = [&](const char* type, const std::vector<u8>& payload) {
            auto len = be32(static_cast<u32>(payload.size()));
            out.insert(out.end(), len.begin(), len.end());
            const std::size_t crc_start = out.size();
            out.insert(out.end(), type, type + 4);
            out.insert(out.end(), payload.begin(), payload.end());
            const u32 crc = static_cast<u32>(
                crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
            auto c = be32(crc);
            out.insert(out.end(), c.begin(), c.end());
        };
        std::vector<u8> ihdr;
        auto push32 = [&](u32 v) {
            auto a = be32(v);
            ihdr.insert(ihdr.end(), a.begin(), a.end());
        };
        push32(static_cast<u32>(w_));
        push32(static_cast<u32>(h_));
        ihdr.push_back(8);   // bit depth
        ihdr.push_back(2);   // RGB
        ihdr.push_back(0);
        ihdr.push_back(0);
        ihdr.push_back(0);
        chunk("IHDR", ihdr);
        chunk("IDAT", comp);
        chunk("IEND", {});
        write_file_bytes(path, out.data(), out.size());
    }

private:
    int w_, h_;
    std::vector<Rgb> px_;
};

// 5x7 bitmap glyphs; lowercase maps onto uppercase.
namespace detail {
struct Glyph {
    char ch;
    const char* rows[7];
};

inline const std::vector<Glyph>& glyphs() {
    static const std::vector<Glyph> g = {
        {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
        {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
        {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
        {'3', {" ### ", "#   #", "    #", " ### ", "    #", "#   #", " ### "}},
        {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
        {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
        {'6', {" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "}},
        {'7', {"#####", "    #", "   # ", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
        {'9', {" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "}},
        {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
        {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
        {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
        {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
        {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
        {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
        {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "}},
        {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
        {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
        {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
        {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
        {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
        {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
        {'N', {"#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"}},
        {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
        {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
        {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
        {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
        {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
        {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
        {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
        {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"}},
        {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
        {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
        {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
        {',', {"     ", "     ", "     ", "     ", " ##  ", " ##  ", " #   "}},
        {'-', {"     ", "     ", "     ", " ### ", "     ", "     ", "     "}},
        {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
        {'%', {"##   ", "##  #", "   # ", "  #  ", " #   ", "#  ##", "   ##"}},
        {'/', {"    #", "    #", "   # ", "  #  ", " #   ", "#    ", "#    "}},
        {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
        {'(', {"  #  ", " #   ", "#    ", "#    ", "#    ", " #   ", "  #  "}},
        {')', {"  #  ", "   # ", "    #", "    #", "    #", "   # ", "  #  "}},
        {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
        {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
    };
    return g;
}

inline const Glyph* find_glyph(char c) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    for (const auto& g : glyphs())
        if (g.ch == c) return &g;
    return nullptr;
}
}  // namespace detail

inline void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
    int cx = x;
    for (char ch : s) {
        const detail::Glyph* g = detail::find_glyph(ch);
        if (g) {
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (g->rows[row][col] == '#')
                        for (int sy = 0; sy < scale; ++sy)
                            for (int sx = 0; sx < scale; ++sx)
                                set(cx + col * scale + sx, y + row * scale + sy, c);
        }
        cx += 6 * scale;
    }
}

inline const std::vector<Rgb>& variant_palette() {
    static const std::vector<Rgb> p = {
        {66, 103, 178}, {235, 149, 50}, {77, 160, 93}, {204, 68, 75}, {130, 109, 190}};
    return p;
}

/// Spread-out sequential colormap (dark blue -> teal -> yellow).
inline Rgb heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double anchors[4][3] = {
        {0.05, 0.03, 0.35}, {0.12, 0.42, 0.55}, {0.30, 0.73, 0.45}, {0.99, 0.90, 0.15}};
    const double pos = t * 3.0;
    const int i = std::min(2, static_cast<int>(pos));
    const double f = pos - i;
    auto lerp = [&](int k) {
        return static_cast<u8>(255.0 * (anchors[i][k] * (1 - f) + anchors[i + 1][k] * f));
    };
    return {lerp(0), lerp(1), lerp(2)};
}

// ---------------------------------------------------------------------------
// Box plots: one group per organ, one box per variant (Fig. 3 style).
// ---------------------------------------------------------------------------
inline void save_dsc_boxplot(const ExperimentReport& report, const fs::path& path) {
    require<ConfigError>(!report.variants.empty() && !report.variants[0].cases.empty(),
                         "boxplot: empty report");
    const int organs = static_cast<int>(report.variants[0].cases[0].organ_dsc.size());
    const int variants = static_cast<int>(report.variants.size());
    const int margin_l = 60, margin_r = 20, margin_t = 50, margin_b = 60;
    const int group_w = std::max(30, 18 * variants + 12);
    const int width = margin_l + margin_r + organs * group_w;
    const int height = 460;
    Canvas cv(width, height);
    const Rgb black{0, 0, 0}, grey{200, 200, 200};

    const int plot_x0 = margin_l, plot_x1 = width - margin_r;
    const int plot_y0 = margin_t, plot_y1 = height - margin_b;
    auto y_of = [&](double dsc) {
        return plot_y1 - static_cast<int>(std::lround(dsc * (plot_y1 - plot_y0)));
    };
    for (int tick = 0; tick <= 10; ++tick) {
        const double v = tick / 10.0;
        cv.hline(plot_x0, plot_x1, y_of(v), grey);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", v);
        cv.text(plot_x0 - 30, y_of(v) - 3, buf, black);
    }
    cv.rect(plot_x0, plot_y0, plot_x1, plot_y1, black);
    cv.text(plot_x0, 12, "PER-ORGAN DSC BY VARIANT", black);

    for (int v = 0; v < variants; ++v)
        cv.text(plot_x0 + 180 * v, 28, report.variants[static_cast<std::size_t>(v)].variant,
                variant_palette()[static_cast<std::size_t>(v) % variant_palette().size()]);

    for (int k = 0; k < organs; ++k) {
        const int gx = plot_x0 + k * group_w;
        cv.text(gx + group_w / 2 - 6, plot_y1 + 10, std::to_string(k + 1), black);
        for (int v = 0; v < variants; ++v) {
            std::vector<double> vals;
            for (const auto& c : report.variants[static_cast<std::size_t>(v)].cases)
                vals.push_back(c.organ_dsc[static_cast<std::size_t>(k)]);
            std::sort(vals.begin(), vals.end());
            auto quantile = [&](double q) {
                const double pos = q * (static_cast<double>(vals.size()) - 1);
                const std::size_t lo = static_cast<std::size_t>(pos);
                const std::size_t hi = std::min(lo + 1, vals.size() - 1);
                return vals[lo] + (pos - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
            };
            const double q1 = quantile(0.25), med = quantile(0.5), q3 = quantile(0.75);
            const Rgb col = variant_palette()[static_cast<std::size_t>(v) % variant_palette().size()];
            const int bx = gx + 8 + v * 18;
            cv.vline(bx + 4, y_of(vals.back()), y_of(q3), col);
            cv.vline(bx + 4, y_of(q1), y_of(vals.front()), col);
            cv.rect(bx, y_of(q3), bx + 8, y_of(q1), col);
            cv.hline(bx, bx + 8, y_of(med), black);
        }
    }
    cv.text(10, height - 16, "ORGAN", black);
    cv.save_png(path);
}

// ---------------------------------------------------------------------------
// JSD heat map (Fig. 1 style): rows = organs of dataset A, cols = dataset B.
// ---------------------------------------------------------------------------
inline void save_jsd_heatmap(const JsdMatrix& m, const fs::path& path) {
    require<ConfigError>(m.organs >= 1, "heatmap: empty matrix");
    const int cell = 42, margin_l = 50, margin_t = 50, margin_r = 110, margin_b = 24;
    const int width = margin_l + m.organs * cell + margin_r;
    const int height = margin_t + m.organs * cell + margin_b;
    Canvas cv(width, height);
    const Rgb black{0, 0, 0};
    double vmax = std::log(2.0);

    cv.text(margin_l, 12, "ORGAN LOCATION JSD (A ROWS / B COLS)", black);
    for (int i = 0; i < m.organs; ++i) {
        cv.text(margin_l - 24, margin_t + i * cell + cell / 2 - 3, std::to_string(i + 1), black);
        cv.text(margin_l + i * cell + cell / 2 - 3, margin_t - 14, std::to_string(i + 1), black);
        for (int j = 0; j < m.organs; ++j) {
            const double v = m.at(i, j);
            const int x0 = margin_l + j * cell, y0 = margin_t + i * cell;
            if (std::isnan(v)) {
                cv.fill_rect(x0, y0, x0 + cell - 2, y0 + cell - 2, {230, 230, 230});
                cv.text(x0 + cell / 2 - 6, y0 + cell / 2 - 3, "NA", black);
                continue;
            }
            cv.fill_rect(x0, y0, x0 + cell - 2, y0 + cell - 2, heat_color(v / vmax));
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%.2f", v);
            cv.text(x0 + 4, y0 + cell / 2 - 3, buf,
                    v / vmax > 0.55 ? Rgb{20, 20, 20} : Rgb{235, 235, 235});
        }
    }
    // color scale
    const int bar_x = margin_l + m.organs * cell + 20;
    for (int y = 0; y < m.organs * cell; ++y) {
        const double t = 1.0 - static_cast<double>(y) / (m.organs * cell - 1);
        cv.hline(bar_x, bar_x + 14, margin_t + y, heat_color(t));
    }
    cv.text(bar_x + 20, margin_t - 3, "LN2", black);
    cv.text(bar_x + 20, margin_t + m.organs * cell - 8, "0", black);
    cv.save_png(path);
}

// Loss-curve line plot from the training log.
inline void save_loss_curves(const std::vector<std::array<double, 5>>& rows,
                             const fs::path& path) {
    require<ConfigError>(!rows.empty(), "loss plot: no rows");
    const int width = 720, height = 420, ml = 70, mr = 20, mt = 40, mb = 40;
    Canvas cv(width, height);
    const Rgb black{0, 0, 0}, grey{220, 220, 220};
    double vmax = 1e-9;
    for (const auto& r : rows)
        vmax = std::max({vmax, r[1], r[2], r[3], r[4]});
    const char* names[4] = {"SEG", "SR", "PUZZLE", "TOTAL"};
    auto x_of = [&](std::size_t i) {
        return ml + static_cast<int>((width - ml - mr) * static_cast<double>(i) /
                                     std::max<std::size_t>(1, rows.size() - 1));
    };
    auto y_of = [&](double v) {
        return height - mb - static_cast<int>((height - mt - mb) * v / vmax);
    };
    for (int t = 0; t <= 4; ++t) {
        const double v = vmax * t / 4;
        cv.hline(ml, width - mr, y_of(v), grey);
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%.3f", v);
        cv.text(6, y_of(v) - 3, buf, black);
    }
    cv.rect(ml, mt, width - mr, height - mb, black);
    cv.text(ml, 12, "TRAINING LOSS TERMS", black);
    for (int s = 0; s < 4; ++s) {
        const Rgb col = variant_palette()[static_cast<std::size_t>(s)];
        cv.text(ml + 140 * s, 26, names[s], col);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const int x0 = x_of(i - 1), y0 = y_of(rows[i - 1][static_cast<std::size_t>(s + 1)]);
            const int x1 = x_of(i), y1 = y_of(rows[i][static_cast<std::size_t>(s + 1)]);
            const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
            for (int st = 0; st <= steps; ++st)
                cv.set(x0 + (x1 - x0) * st / steps, y0 + (y1 - y0) * st / steps, col);
        }
    }
    cv.save_png(path);
}

}  // namespace darr::plot
