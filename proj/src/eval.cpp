#include "vpgrid/eval.hpp"

#include "vpgrid/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace vpgrid {

static double error_rate(std::size_t hits, std::size_t count) {
    return static_cast<double>(count - hits) / static_cast<double>(count);
}

double EvalRow::top1_error() const noexcept {
    return error_rate(top1_hits, count);
}

double EvalRow::top5_error() const noexcept {
    return error_rate(top5_hits, count);
}

double ExistenceRow::accuracy() const noexcept {
    return static_cast<double>(correct) / static_cast<double>(count);
}

EvalRow evaluate(std::span<const RankedPrediction> predictions, std::span<const CellIndex> truths,
                 const GridSpec& grid) {
    if (predictions.size() != truths.size()) {
        throw DomainError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(truths.size()) + " labels");
    }
    if (predictions.empty()) {
        throw DomainError("evaluate: no samples");
    }
    EvalRow row;
    row.grid_n = grid.n();
    row.count = predictions.size();
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        row.top1_hits += topk_hit(predictions[i], truths[i], 1) ? 1 : 0;
        row.top5_hits += topk_hit(predictions[i], truths[i], 5) ? 1 : 0;
    }
    return row;
}

ExistenceCounts evaluate_existence(std::span<const double> probabilities, std::span<const bool> truths,
                                   double threshold) {
    if (probabilities.size() != truths.size()) {
        throw DomainError("evaluate_existence: length mismatch");
    }
    if (probabilities.empty()) {
        throw DomainError("evaluate_existence: no samples");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw DomainError("evaluate_existence: threshold must lie in (0,1)");
    }
    ExistenceCounts c;
    c.count = probabilities.size();
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        c.correct += ((probabilities[i] >= threshold) == truths[i]) ? 1 : 0;
    }
    return c;
}

static std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

static const char* kReportHeader = "method\tgrid_n\tN\ttop1_hits\ttop5_hits\ttop1_err\ttop5_err";

std::string format_report_tsv(const EvalReport& report) {
    std::ostringstream out;
    out << kReportHeader << '\n';
    for (const EvalRow& r : report.rows) {
        out << r.method << '\t' << r.grid_n << '\t' << r.count << '\t' << r.top1_hits << '\t' << r.top5_hits
            << '\t' << fixed4(r.top1_error()) << '\t' << fixed4(r.top5_error()) << '\n';
    }
    for (const ExistenceRow& e : report.existence) {
        out << "#existence\t" << e.method << '\t' << e.count << '\t' << e.correct << '\t' << fixed4(e.accuracy())
            << '\n';
    }
    return out.str();
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) {
            return out;
        }
        start = tab + 1;
    }
}

std::size_t parse_count(const std::string& s, std::size_t offset) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ParseError("report: expected a non-negative integer, got '" + s + "'", offset);
    }
    return std::stoull(s);
}

} // namespace

EvalReport parse_report_tsv(const std::string& text) {
    EvalReport report;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) {
            eol = text.size();
        }
        const std::string line = text.substr(pos, eol - pos);
        const std::size_t offset = pos;
        pos = eol + 1;
        if (line.empty()) {
            continue;
        }
        if (!header_seen) {
            if (line != kReportHeader) {
                throw ParseError("report: missing header line", offset);
            }
            header_seen = true;
            continue;
        }
        const auto f = split_tabs(line);
        if (f[0] == "#existence") {
            if (f.size() != 5) {
                throw ParseError("report: existence line needs 5 fields", offset);
            }
            ExistenceRow e{f[1], parse_count(f[2], offset), parse_count(f[3], offset)};
            if (e.count == 0 || e.correct > e.count) {
                throw ParseError("report: inconsistent existence counts", offset);
            }
            report.existence.push_back(std::move(e));
            continue;
        }
        if (f.size() != 7) {
            throw ParseError("report: row needs 7 fields", offset);
        }
        EvalRow r;
        r.method = f[0];
        r.grid_n = static_cast<int>(parse_count(f[1], offset));
        r.count = parse_count(f[2], offset);
        r.top1_hits = parse_count(f[3], offset);
        r.top5_hits = parse_count(f[4], offset);
        if (r.count == 0 || r.top1_hits > r.top5_hits || r.top5_hits > r.count) {
            throw ParseError("report: inconsistent hit counts", offset);
        }
        report.rows.push_back(std::move(r));
    }
    if (!header_seen) {
        throw ParseError("report: empty file", 0);
    }
    return report;
}

std::string format_report_table(const EvalReport& report) {
    std::vector<std::vector<std::string>> cells{
        {"method", "grid", "N", "top1 hits", "top5 hits", "top1 err", "top5 err", "chance"}};
    for (const EvalRow& r : report.rows) {
        const std::string grid = std::to_string(r.grid_n) + "x" + std::to_string(r.grid_n);
        cells.push_back({r.method, grid, std::to_string(r.count), std::to_string(r.top1_hits),
                         std::to_string(r.top5_hits), fixed4(r.top1_error()), fixed4(r.top5_error()),
                         fixed4(1.0 / (static_cast<double>(r.grid_n) * r.grid_n))});
    }
    std::vector<std::size_t> width(cells.front().size(), 0);
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::ostringstream out;
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c == 0) {
                out << row[c] << std::string(width[c] - row[c].size(), ' ');
            } else {
                out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
            }
        }
        out << '\n';
    }
    for (const ExistenceRow& e : report.existence) {
        out << "existence accuracy (" << e.method << "): " << e.correct << "/" << e.count << " = "
            << fixed4(e.accuracy()) << '\n';
    }
    out << "chance = 1/p. Full-scale reference (300x300 frames, VGG-class network): top-5 error 0.051 (10x10),\n"
           "0.159 (20x20), 0.253 (30x30); top-1 accuracy ~0.57; top-1 center accuracy 0.165 (20x20).\n";
    return out.str();
}

OverlayStyle OverlayStyle::for_grid(const GridSpec& grid) {
    const double cell = std::min(grid.cell_width(), grid.cell_height());
    OverlayStyle s;
    s.top1_radius = std::max(2.0, 0.45 * cell);
    s.other_radius = std::max(1.0, 0.25 * cell);
    return s;
}

void OverlayStyle::validate() const {
    if (!(top1_radius > other_radius) || !(other_radius > 0.0)) {
        throw DomainError("overlay: top-1 radius must exceed the others, which must be positive");
    }
    if (!(top1_intensity >= 0.0 && top1_intensity <= 1.0 && other_intensity >= 0.0 && other_intensity <= 1.0)) {
        throw DomainError("overlay: intensities must lie in [0,1]");
    }
    if (!(ring_thickness > 0.0)) {
        throw DomainError("overlay: ring thickness must be positive");
    }
}

std::vector<OverlayCircle> overlay_circles(const RankedPrediction& pred, const OverlayStyle& style) {
    style.validate();
    std::vector<OverlayCircle> circles;
    const std::size_t shown = std::min<std::size_t>(5, pred.size());
    for (std::size_t i = 0; i < shown; ++i) {
        circles.push_back({cell_to_center(pred.entries()[i].cell, pred.grid()),
                           i == 0 ? style.top1_radius : style.other_radius,
                           i == 0 ? style.top1_intensity : style.other_intensity});
    }
    return circles;
}

ImageRaster render_overlay(const ImageRaster& img, const RankedPrediction& pred, const OverlayStyle& style) {
    if (pred.grid().width() != img.width() || pred.grid().height() != img.height()) {
        throw DomainError("overlay: prediction grid does not match the image size");
    }
    const auto circles = overlay_circles(pred, style);
    ImageRaster out = img;
    const double reach = style.ring_thickness / 2.0 + 0.5;
    // Lower ranks first so the top-1 ring stays on top.
    for (auto it = circles.rbegin(); it != circles.rend(); ++it) {
        const OverlayCircle& c = *it;
        const int x0 = std::max(0, static_cast<int>(std::floor(c.center.x - c.radius - reach)));
        const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(c.center.x + c.radius + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(c.center.y - c.radius - reach)));
        const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(c.center.y + c.radius + reach)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d = std::abs(std::hypot(x - c.center.x, y - c.center.y) - c.radius);
                const double coverage = std::clamp(reach - d, 0.0, 1.0);
                if (coverage > 0.0) {
                    double& v = out.at(x, y);
                    v += coverage * (c.intensity - v);
                }
            }
        }
    }
    return out;
}

} // namespace vpgrid
