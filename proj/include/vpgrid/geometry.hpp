#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vpgrid {

/// Image frame partitioned into an n x n grid of cells.
///
/// Cell extents are the exact rationals width/n and height/n; quantization
/// works on `coord * n / extent` so it never sees a pre-rounded cell size.
class GridSpec {
public:
    GridSpec(int width, int height, int n);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int n() const noexcept { return n_; }
    int class_count() const noexcept { return n_ * n_; }
    double cell_width() const noexcept { return static_cast<double>(width_) / n_; }
    double cell_height() const noexcept { return static_cast<double>(height_) / n_; }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;

private:
    int width_;
    int height_;
    int n_;
};

/// x runs along columns, y along rows, origin at the top-left pixel.
struct PixelPoint {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct CellIndex {
    int row = 0;
    int col = 0;

    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

bool is_valid(CellIndex cell, const GridSpec& grid) noexcept;

CellIndex pixel_to_cell(PixelPoint point, const GridSpec& grid);
PixelPoint cell_to_center(CellIndex cell, const GridSpec& grid);
int linearize(CellIndex cell, const GridSpec& grid);
CellIndex delinearize(int class_index, const GridSpec& grid);

/// Probability of guessing the right cell uniformly at random, 1/p.
double chance_level(const GridSpec& grid) noexcept;

struct ScoredCell {
    CellIndex cell;
    double score = 0.0;
};

/// Cells ordered by descending score; ties go to the smaller linear index.
class RankedPrediction {
public:
    explicit RankedPrediction(GridSpec grid) : grid_(grid) {}

    /// Ranks `scores` (one per linear cell index) and keeps the best `top_k`.
    static RankedPrediction from_scores(std::span<const double> scores, const GridSpec& grid,
                                        std::size_t top_k);

    /// Takes entries already in rank order. Throws DomainError if the order
    /// or uniqueness invariant does not hold.
    static RankedPrediction from_ordered(std::vector<ScoredCell> entries, const GridSpec& grid);

    const GridSpec& grid() const noexcept { return grid_; }
    const std::vector<ScoredCell>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

private:
    GridSpec grid_;
    std::vector<ScoredCell> entries_;
};

/// True iff `truth` is among the first min(k, size) ranked cells.
bool topk_hit(const RankedPrediction& pred, CellIndex truth, std::size_t k);

} // namespace vpgrid
