#include "vpgrid/geometry.hpp"

#include "vpgrid/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vpgrid {

GridSpec::GridSpec(int width, int height, int n) : width_(width), height_(height), n_(n) {
    if (n < 1 || width < n || height < n) {
        throw DomainError("invalid grid: " + std::to_string(width) + "x" + std::to_string(height) +
                          " with n=" + std::to_string(n));
    }
}

bool is_valid(CellIndex cell, const GridSpec& grid) noexcept {
    return cell.row >= 0 && cell.row < grid.n() && cell.col >= 0 && cell.col < grid.n();
}

static int quantize(double coord, int extent, int n) {
    const int idx = static_cast<int>(std::floor(coord * n / extent));
    return std::min(idx, n - 1);
}

CellIndex pixel_to_cell(PixelPoint point, const GridSpec& grid) {
    if (!std::isfinite(point.x) || !std::isfinite(point.y) || point.x < 0.0 || point.y < 0.0 ||
        point.x >= grid.width() || point.y >= grid.height()) {
        throw DomainError("pixel (" + std::to_string(point.x) + ", " + std::to_string(point.y) +
                          ") outside the frame");
    }
    return {quantize(point.y, grid.height(), grid.n()), quantize(point.x, grid.width(), grid.n())};
}

PixelPoint cell_to_center(CellIndex cell, const GridSpec& grid) {
    if (!is_valid(cell, grid)) {
        throw DomainError("cell (" + std::to_string(cell.row) + ", " + std::to_string(cell.col) +
                          ") outside the grid");
    }
    return {(cell.col + 0.5) * grid.width() / grid.n(), (cell.row + 0.5) * grid.height() / grid.n()};
}

int linearize(CellIndex cell, const GridSpec& grid) {
    if (!is_valid(cell, grid)) {
        throw DomainError("cell (" + std::to_string(cell.row) + ", " + std::to_string(cell.col) +
                          ") outside the grid");
    }
    return cell.row * grid.n() + cell.col;
}

CellIndex delinearize(int class_index, const GridSpec& grid) {
    if (class_index < 0 || class_index >= grid.class_count()) {
        throw DomainError("class index " + std::to_string(class_index) + " outside [0, p)");
    }
    return {class_index / grid.n(), class_index % grid.n()};
}

double chance_level(const GridSpec& grid) noexcept {
    return 1.0 / grid.class_count();
}

RankedPrediction RankedPrediction::from_scores(std::span<const double> scores, const GridSpec& grid,
                                               std::size_t top_k) {
    if (scores.size() != static_cast<std::size_t>(grid.class_count())) {
        throw DomainError("score vector has " + std::to_string(scores.size()) + " entries, grid has " +
                          std::to_string(grid.class_count()) + " cells");
    }
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t keep = std::min(top_k, order.size());
    auto better = [&](int a, int b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      better);

    RankedPrediction pred(grid);
    pred.entries_.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        pred.entries_.push_back({delinearize(order[i], grid), scores[order[i]]});
    }
    return pred;
}

RankedPrediction RankedPrediction::from_ordered(std::vector<ScoredCell> entries, const GridSpec& grid) {
    std::vector<bool> seen(static_cast<std::size_t>(grid.class_count()), false);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const int idx = linearize(entries[i].cell, grid);
        if (seen[idx]) {
            throw DomainError("duplicate cell in ranked prediction");
        }
        seen[idx] = true;
        if (i > 0) {
            const auto& prev = entries[i - 1];
            const bool ordered = prev.score > entries[i].score ||
                                 (prev.score == entries[i].score && linearize(prev.cell, grid) < idx);
            if (!ordered) {
                throw DomainError("ranked prediction entries out of order at rank " + std::to_string(i + 1));
            }
        }
    }
    RankedPrediction pred(grid);
    pred.entries_ = std::move(entries);
    return pred;
}

bool topk_hit(const RankedPrediction& pred, CellIndex truth, std::size_t k) {
    const std::size_t limit = std::min(k, pred.size());
    for (std::size_t i = 0; i < limit; ++i) {
        if (pred.entries()[i].cell == truth) {
            return true;
        }
    }
    return false;
}

} // namespace vpgrid
