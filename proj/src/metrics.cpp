#include "swinmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace swinmil {

namespace {

std::vector<std::pair<Index, Index>> foreground_points(const BinaryMask& m) {
    std::vector<std::pair<Index, Index>> pts;
    for (Index i = 0; i < m.h; ++i) {
        for (Index j = 0; j < m.w; ++j) {
            if (m.at(i, j)) pts.emplace_back(i, j);
        }
    }
    return pts;
}

// max over a in A of the distance to the nearest b in B. Squared distances
// stay in integer arithmetic; the square root happens once per source point,
// so results match a per-pair sqrt formulation bit for bit.
double directed_hausdorff(const std::vector<std::pair<Index, Index>>& a,
                          const std::vector<std::pair<Index, Index>>& b) {
    double worst = 0.0;
    for (const auto& [ai, aj] : a) {
        Index best = std::numeric_limits<Index>::max();
        for (const auto& [bi, bj] : b) {
            const Index dy = ai - bi, dx = aj - bj;
            const Index d2 = dy * dy + dx * dx;
            if (d2 < best) {
                best = d2;
                if (best == 0) break;
            }
        }
        worst = std::max(worst, std::sqrt(static_cast<double>(best)));
    }
    return worst;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

double f1_score(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_shape(pred, gt, "f1_score");
    Index inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.fg.size(); ++i) {
        const bool a = pred.fg[i] != 0, b = gt.fg[i] != 0;
        inter += (a && b);
        p += a;
        g += b;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double f1_negative(const BinaryMask& pred) {
    Index tn = 0, fp = 0;
    for (auto v : pred.fg) {
        if (v) {
            ++fp;
        } else {
            ++tn;
        }
    }
    if (2 * tn + fp == 0) return 1.0;  // zero-pixel mask
    return 2.0 * static_cast<double>(tn) / static_cast<double>(2 * tn + fp);
}

HausdorffResult hausdorff(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_shape(pred, gt, "hausdorff");
    const auto a = foreground_points(pred);
    const auto b = foreground_points(gt);
    if (a.empty() && b.empty()) return {0.0, true};
    if (a.empty() || b.empty()) return {0.0, false};
    return {std::max(directed_hausdorff(a, b), directed_hausdorff(b, a)), true};
}

bool EvalReport::has_hd() const { return num_pos > 0 && hd_pos_undefined_count < num_pos; }

EvalReport aggregate_report(std::vector<ImageEval> per_image) {
    EvalReport rep;
    double f1p = 0, f1n = 0, hd = 0, secs = 0;
    int hd_count = 0;
    for (const auto& row : per_image) {
        secs += row.seconds;
        if (row.label == 1) {
            ++rep.num_pos;
            f1p += row.f1;
            if (row.hd_defined) {
                hd += row.hd;
                ++hd_count;
            } else {
                ++rep.hd_pos_undefined_count;
            }
        } else {
            ++rep.num_neg;
            f1n += row.f1;
        }
    }
    if (rep.num_pos > 0) rep.f1_pos = f1p / rep.num_pos;
    if (hd_count > 0) rep.hd_pos = hd / hd_count;
    if (rep.num_neg > 0) rep.f1_neg = f1n / rep.num_neg;
    if (!per_image.empty()) rep.runtime_per_image_s = secs / static_cast<double>(per_image.size());
    rep.per_image = std::move(per_image);
    return rep;
}

std::string format_report(const EvalReport& report) {
    std::ostringstream os;
    os << "# per-image: img <id> <label> <f1> <hd>\n";
    for (const auto& row : report.per_image) {
        os << "img " << row.id << " " << row.label << " " << fmt(row.f1) << " "
           << (row.hd_defined ? fmt(row.hd) : std::string("n/a")) << "\n";
    }
    os << "f1_pos = " << (report.has_pos() ? fmt(report.f1_pos) : std::string("n/a")) << "\n";
    os << "hd_pos = " << (report.has_hd() ? fmt(report.hd_pos) : std::string("n/a")) << "\n";
    os << "hd_pos_undefined_count = " << report.hd_pos_undefined_count << "\n";
    os << "f1_neg = " << (report.has_neg() ? fmt(report.f1_neg) : std::string("n/a")) << "\n";
    os << "runtime_per_image_s = " << fmt(report.runtime_per_image_s) << "\n";
    return os.str();
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_report: cannot open " + path.string());
    os << format_report(report);
    if (!os) throw std::runtime_error("write_report: write failed for " + path.string());
}

}  // namespace swinmil
