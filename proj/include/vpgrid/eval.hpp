#pragma once

#include "vpgrid/geometry.hpp"
#include "vpgrid/image.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vpgrid {

/// Hit counts of one method on one grid. Errors derive from the counts.
struct EvalRow {
    std::string method;
    int grid_n = 0;
    std::size_t count = 0;
    std::size_t top1_hits = 0;
    std::size_t top5_hits = 0;

    double top1_error() const noexcept;
    double top5_error() const noexcept;

    friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct ExistenceRow {
    std::string method;
    std::size_t count = 0;
    std::size_t correct = 0;

    double accuracy() const noexcept;

    friend bool operator==(const ExistenceRow&, const ExistenceRow&) = default;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<ExistenceRow> existence;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalRow evaluate(std::span<const RankedPrediction> predictions, std::span<const CellIndex> truths,
                 const GridSpec& grid);

struct ExistenceCounts {
    std::size_t count = 0;
    std::size_t correct = 0;

    double accuracy() const noexcept { return static_cast<double>(correct) / static_cast<double>(count); }
};

/// A sample is called positive when its probability is >= threshold.
ExistenceCounts evaluate_existence(std::span<const double> probabilities, std::span<const bool> truths,
                                   double threshold = 0.5);

/// Tab-separated table:
/// `method grid_n N top1_hits top5_hits top1_err top5_err`, fractions with
/// four decimals. Existence results follow as `#existence` lines
/// (method, N, correct, accuracy).
std::string format_report_tsv(const EvalReport& report);
EvalReport parse_report_tsv(const std::string& text);

/// Column-aligned rendering for terminals.
std::string format_report_table(const EvalReport& report);

/// Rings marking ranked cells: top-1 largest and brightest, ranks 2-5
/// smaller.
struct OverlayStyle {
    double top1_radius = 6.0;
    double other_radius = 3.0;
    double top1_intensity = 1.0;
    double other_intensity = 0.6;
    double ring_thickness = 1.0;

    /// Radii proportional to the grid's cell size.
    static OverlayStyle for_grid(const GridSpec& grid);
    void validate() const;
};

struct OverlayCircle {
    PixelPoint center;
    double radius = 0.0;
    double intensity = 0.0;
};

/// Circles for the first five ranked cells, in rank order.
std::vector<OverlayCircle> overlay_circles(const RankedPrediction& pred, const OverlayStyle& style);

ImageRaster render_overlay(const ImageRaster& img, const RankedPrediction& pred, const OverlayStyle& style);

} // namespace vpgrid
