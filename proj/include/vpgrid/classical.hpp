#pragma once

#include "vpgrid/geometry.hpp"
#include "vpgrid/image.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vpgrid {

struct EdgeMap {
    int width = 0;
    int height = 0;
    double threshold = 0.0;
    std::vector<std::uint8_t> mask;
    std::vector<double> magnitude;
    std::vector<double> gx;
    std::vector<double> gy;

    bool edge(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
    std::size_t count() const noexcept;
};

/// 3x3 Sobel gradient magnitude; the one-pixel border is never an edge.
EdgeMap sobel_edges(const ImageRaster& img, double threshold);

/// Votes indexed (theta_bin, rho_bin) under rho = x cos(theta) + y sin(theta).
/// theta_k = k*pi/theta_bins; rho_bin r covers rho = r*resolution - rho_max.
class HoughAccumulator {
public:
    HoughAccumulator(int theta_bins, double rho_resolution, int rho_max);

    int theta_bins() const noexcept { return theta_bins_; }
    int rho_bins() const noexcept { return rho_bins_; }
    int rho_max() const noexcept { return rho_max_; }
    double rho_resolution() const noexcept { return rho_resolution_; }

    double theta(int theta_bin) const noexcept;
    double rho(int rho_bin) const noexcept;
    /// Bin whose rho is the negation of `rho_bin`'s.
    int mirror_rho_bin(int rho_bin) const noexcept;

    std::int64_t votes(int theta_bin, int rho_bin) const { return votes_[index(theta_bin, rho_bin)]; }
    std::int64_t& votes(int theta_bin, int rho_bin) { return votes_[index(theta_bin, rho_bin)]; }
    std::int64_t total() const noexcept;

private:
    std::size_t index(int t, int r) const noexcept { return static_cast<std::size_t>(t) * rho_bins_ + r; }

    int theta_bins_;
    double rho_resolution_;
    int rho_max_;
    int rho_bins_;
    std::vector<std::int64_t> votes_;
};

HoughAccumulator hough_transform(const EdgeMap& edges, int theta_bins, double rho_resolution);

struct HoughLine {
    double theta = 0.0;
    double rho = 0.0;
    std::int64_t votes = 0;
    int theta_bin = 0;
    int rho_bin = 0;
};

/// Greedy non-maximum suppression over a (2r+1)^2 window. The window wraps
/// across theta = pi, where rho changes sign.
std::vector<HoughLine> extract_peaks(const HoughAccumulator& acc, std::size_t max_lines,
                                     std::int64_t min_votes, int nms_radius);

/// Intersection of two lines, absent when they are near-parallel
/// (|sin(dtheta)| < 1e-6) or meet outside [0,width) x [0,height).
std::optional<PixelPoint> intersect(const HoughLine& a, const HoughLine& b, int width, int height);

struct LineFitOptions {
    /// Edge pixels within this distance of a line support its fit.
    double band = 3.0;
    /// Supporting pixels need a gradient within this angle (radians) of
    /// the line normal.
    double max_normal_angle = 0.1;
    int iterations = 3;
    /// Fitted lines closer than this to a stronger one are dropped.
    double merge_theta = 0.035;
    double merge_rho = 2.0;
};

/// Re-estimates each Hough line by a magnitude-weighted total-least-squares
/// fit to its supporting edge pixels, then drops near-duplicates (keeping
/// the earlier, stronger line). Votes and bins are kept from the peak.
std::vector<HoughLine> fit_lines(std::span<const HoughLine> lines, const EdgeMap& edges,
                                 const LineFitOptions& options = {});

struct VoteGrid {
    GridSpec grid;
    std::vector<double> weights;
    std::vector<int> pair_counts; ///< intersecting pairs per cell
};

/// Accumulates pairwise intersections into grid cells, each pair weighted by
/// min(votes_a, votes_b).
VoteGrid accumulate_votes(std::span<const HoughLine> lines, const GridSpec& grid);

/// Cells ranked by vote weight (only cells that received votes). With no
/// in-frame intersection the image-center cell is the sole prediction.
RankedPrediction vote_vp(std::span<const HoughLine> lines, const GridSpec& grid, std::size_t top_k);

struct HoughConfig {
    double edge_threshold = 2.0;
    int theta_bins = 180;
    double rho_resolution = 1.0;
    /// Absent means 0.3 x the longest expected segment, taken as half the
    /// shorter image side.
    std::optional<std::int64_t> min_votes;
    std::size_t max_lines = 12;
    int nms_radius = 2;
    bool fit = true;
    LineFitOptions fit_options;

    std::int64_t resolved_min_votes(int width, int height) const;
};

std::vector<HoughLine> detect_lines(const ImageRaster& img, const HoughConfig& cfg);

/// Full classical chain: Sobel, Hough, peak extraction, optional line
/// fitting, intersection voting.
RankedPrediction detect_hough(const ImageRaster& img, const GridSpec& grid, const HoughConfig& cfg,
                              std::size_t top_k);

enum class CenterMode { top1, top5 };

CenterMode parse_center_mode(const std::string& name);

/// Most frequent training cell (ties to the smaller linear index); top5 adds
/// its left, up, right and down neighbours in that order, dropping any that
/// fall off the grid. Scores descend 1.0, 0.8, ... with rank.
RankedPrediction center_baseline(std::span<const CellIndex> train_labels, const GridSpec& grid,
                                 CenterMode mode);

} // namespace vpgrid
