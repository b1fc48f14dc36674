#include "vpgrid/classical.hpp"

#include "vpgrid/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace vpgrid {

std::size_t EdgeMap::count() const noexcept {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

EdgeMap sobel_edges(const ImageRaster& img, double threshold) {
    if (img.width() < 3 || img.height() < 3) {
        throw DomainError("Sobel needs an image of at least 3x3");
    }
    if (!(threshold >= 0.0)) {
        throw DomainError("edge threshold must be non-negative");
    }
    EdgeMap e;
    e.width = img.width();
    e.height = img.height();
    e.threshold = threshold;
    const auto n = static_cast<std::size_t>(e.width) * e.height;
    e.mask.assign(n, 0);
    e.magnitude.assign(n, 0.0);
    e.gx.assign(n, 0.0);
    e.gy.assign(n, 0.0);
    for (int y = 1; y + 1 < img.height(); ++y) {
        for (int x = 1; x + 1 < img.width(); ++x) {
            const double gx = (img.at(x + 1, y - 1) + 2.0 * img.at(x + 1, y) + img.at(x + 1, y + 1)) -
                              (img.at(x - 1, y - 1) + 2.0 * img.at(x - 1, y) + img.at(x - 1, y + 1));
            const double gy = (img.at(x - 1, y + 1) + 2.0 * img.at(x, y + 1) + img.at(x + 1, y + 1)) -
                              (img.at(x - 1, y - 1) + 2.0 * img.at(x, y - 1) + img.at(x + 1, y - 1));
            const double mag = std::sqrt(gx * gx + gy * gy);
            const auto i = static_cast<std::size_t>(y) * e.width + x;
            e.magnitude[i] = mag;
            e.gx[i] = gx;
            e.gy[i] = gy;
            e.mask[i] = mag >= threshold ? 1 : 0;
        }
    }
    return e;
}

HoughAccumulator::HoughAccumulator(int theta_bins, double rho_resolution, int rho_max)
    : theta_bins_(theta_bins), rho_resolution_(rho_resolution), rho_max_(rho_max) {
    if (theta_bins < 1) {
        throw DomainError("Hough needs at least one theta bin");
    }
    if (!(rho_resolution > 0.0)) {
        throw DomainError("rho resolution must be positive");
    }
    rho_bins_ = static_cast<int>(std::lround(2.0 * rho_max / rho_resolution)) + 1;
    votes_.assign(static_cast<std::size_t>(theta_bins_) * rho_bins_, 0);
}

double HoughAccumulator::theta(int theta_bin) const noexcept {
    return theta_bin * std::numbers::pi / theta_bins_;
}

double HoughAccumulator::rho(int rho_bin) const noexcept {
    return rho_bin * rho_resolution_ - rho_max_;
}

int HoughAccumulator::mirror_rho_bin(int rho_bin) const noexcept {
    return static_cast<int>(std::lround((rho_max_ - rho(rho_bin)) / rho_resolution_));
}

std::int64_t HoughAccumulator::total() const noexcept {
    return std::accumulate(votes_.begin(), votes_.end(), std::int64_t{0});
}

HoughAccumulator hough_transform(const EdgeMap& edges, int theta_bins, double rho_resolution) {
    const int rho_max = static_cast<int>(std::ceil(std::hypot(edges.width, edges.height)));
    HoughAccumulator acc(theta_bins, rho_resolution, rho_max);

    std::vector<double> cos_t(static_cast<std::size_t>(theta_bins));
    std::vector<double> sin_t(static_cast<std::size_t>(theta_bins));
    for (int t = 0; t < theta_bins; ++t) {
        cos_t[t] = std::cos(acc.theta(t));
        sin_t[t] = std::sin(acc.theta(t));
    }
    for (int y = 0; y < edges.height; ++y) {
        for (int x = 0; x < edges.width; ++x) {
            if (!edges.edge(x, y)) {
                continue;
            }
            for (int t = 0; t < theta_bins; ++t) {
                const double rho = x * cos_t[t] + y * sin_t[t];
                const auto r = static_cast<int>(std::lround((rho + rho_max) / rho_resolution));
                ++acc.votes(t, r);
            }
        }
    }
    return acc;
}

std::vector<HoughLine> extract_peaks(const HoughAccumulator& acc, std::size_t max_lines,
                                     std::int64_t min_votes, int nms_radius) {
    if (max_lines < 1) {
        throw DomainError("max_lines must be at least 1");
    }
    const int nt = acc.theta_bins();
    const int nr = acc.rho_bins();

    struct Candidate {
        std::int64_t votes;
        int t;
        int r;
    };
    std::vector<Candidate> candidates;
    for (int t = 0; t < nt; ++t) {
        for (int r = 0; r < nr; ++r) {
            const std::int64_t v = acc.votes(t, r);
            if (v > 0 && v >= min_votes) {
                candidates.push_back({v, t, r});
            }
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.votes != b.votes) {
            return a.votes > b.votes;
        }
        return a.t != b.t ? a.t < b.t : a.r < b.r;
    });

    std::vector<std::uint8_t> suppressed(static_cast<std::size_t>(nt) * nr, 0);
    auto suppress_around = [&](int t0, int r0) {
        for (int dt = -nms_radius; dt <= nms_radius; ++dt) {
            for (int dr = -nms_radius; dr <= nms_radius; ++dr) {
                int t = t0 + dt;
                int r = r0 + dr;
                if (t < 0 || t >= nt) {
                    t = (t + nt) % nt;
                    r = acc.mirror_rho_bin(r);
                }
                if (t >= 0 && t < nt && r >= 0 && r < nr) {
                    suppressed[static_cast<std::size_t>(t) * nr + r] = 1;
                }
            }
        }
    };

    std::vector<HoughLine> lines;
    for (const Candidate& c : candidates) {
        if (lines.size() >= max_lines) {
            break;
        }
        if (suppressed[static_cast<std::size_t>(c.t) * nr + c.r]) {
            continue;
        }
        lines.push_back({acc.theta(c.t), acc.rho(c.r), c.votes, c.t, c.r});
        suppress_around(c.t, c.r);
    }
    return lines;
}

std::optional<PixelPoint> intersect(const HoughLine& a, const HoughLine& b, int width, int height) {
    const double ca = std::cos(a.theta);
    const double sa = std::sin(a.theta);
    const double cb = std::cos(b.theta);
    const double sb = std::sin(b.theta);
    const double det = ca * sb - sa * cb; // sin(theta_b - theta_a)
    if (std::abs(det) < 1e-6) {
        return std::nullopt;
    }
    const double x = (a.rho * sb - b.rho * sa) / det;
    const double y = (ca * b.rho - cb * a.rho) / det;
    if (!(x >= 0.0 && x < width && y >= 0.0 && y < height)) {
        return std::nullopt;
    }
    return PixelPoint{x, y};
}

namespace {

// Normal form with theta in [0, pi).
HoughLine normalized(double theta, double rho, const HoughLine& from) {
    while (theta < 0.0) {
        theta += std::numbers::pi;
        rho = -rho;
    }
    while (theta >= std::numbers::pi) {
        theta -= std::numbers::pi;
        rho = -rho;
    }
    return {theta, rho, from.votes, from.theta_bin, from.rho_bin};
}

HoughLine fit_one(const HoughLine& line, const EdgeMap& edges, const LineFitOptions& o) {
    const double min_alignment = std::cos(o.max_normal_angle);
    HoughLine cur = line;
    for (int it = 0; it < o.iterations; ++it) {
        const double nx = std::cos(cur.theta);
        const double ny = std::sin(cur.theta);
        double sw = 0.0;
        double sx = 0.0;
        double sy = 0.0;
        std::vector<std::array<double, 3>> support;
        for (int y = 0; y < edges.height; ++y) {
            for (int x = 0; x < edges.width; ++x) {
                if (!edges.edge(x, y) || std::abs(x * nx + y * ny - cur.rho) > o.band) {
                    continue;
                }
                const auto i = static_cast<std::size_t>(y) * edges.width + x;
                const double mag = edges.magnitude[i];
                if (mag <= 0.0 || std::abs(edges.gx[i] * nx + edges.gy[i] * ny) < min_alignment * mag) {
                    continue;
                }
                support.push_back({static_cast<double>(x), static_cast<double>(y), mag});
                sw += mag;
                sx += mag * x;
                sy += mag * y;
            }
        }
        if (support.size() < 2) {
            return cur;
        }
        const double mx = sx / sw;
        const double my = sy / sw;
        double cxx = 0.0;
        double cxy = 0.0;
        double cyy = 0.0;
        for (const auto& [x, y, w] : support) {
            cxx += w * (x - mx) * (x - mx);
            cxy += w * (x - mx) * (y - my);
            cyy += w * (y - my) * (y - my);
        }
        // The normal is the minor axis of the weighted scatter.
        const double major = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
        const double theta = major + std::numbers::pi / 2.0;
        cur = normalized(theta, mx * std::cos(theta) + my * std::sin(theta), line);
    }
    return cur;
}

bool near_duplicate(const HoughLine& a, const HoughLine& b, const LineFitOptions& o) {
    const double dt = std::abs(a.theta - b.theta);
    if (dt <= o.merge_theta) {
        return std::abs(a.rho - b.rho) <= o.merge_rho;
    }
    // Lines near theta = 0 and theta = pi describe the same direction.
    if (std::numbers::pi - dt <= o.merge_theta) {
        return std::abs(a.rho + b.rho) <= o.merge_rho;
    }
    return false;
}

} // namespace

std::vector<HoughLine> fit_lines(std::span<const HoughLine> lines, const EdgeMap& edges,
                                 const LineFitOptions& options) {
    std::vector<HoughLine> out;
    for (const HoughLine& line : lines) {
        const HoughLine fitted = fit_one(line, edges, options);
        const bool duplicate = std::any_of(out.begin(), out.end(),
                                           [&](const HoughLine& kept) { return near_duplicate(kept, fitted, options); });
        if (!duplicate) {
            out.push_back(fitted);
        }
    }
    return out;
}

VoteGrid accumulate_votes(std::span<const HoughLine> lines, const GridSpec& grid) {
    VoteGrid vg{grid, std::vector<double>(static_cast<std::size_t>(grid.class_count()), 0.0),
                std::vector<int>(static_cast<std::size_t>(grid.class_count()), 0)};
    for (std::size_t i = 0; i < lines.size(); ++i) {
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            const auto p = intersect(lines[i], lines[j], grid.width(), grid.height());
            if (!p) {
                continue;
            }
            const int cell = linearize(pixel_to_cell(*p, grid), grid);
            vg.weights[cell] += static_cast<double>(std::min(lines[i].votes, lines[j].votes));
            ++vg.pair_counts[cell];
        }
    }
    return vg;
}

RankedPrediction vote_vp(std::span<const HoughLine> lines, const GridSpec& grid, std::size_t top_k) {
    if (top_k < 1) {
        throw DomainError("top_k must be at least 1");
    }
    const VoteGrid vg = accumulate_votes(lines, grid);
    const auto voted = static_cast<std::size_t>(
        std::count_if(vg.weights.begin(), vg.weights.end(), [](double w) { return w > 0.0; }));
    if (voted == 0) {
        const CellIndex center = pixel_to_cell({grid.width() / 2.0, grid.height() / 2.0}, grid);
        return RankedPrediction::from_ordered({{center, 0.0}}, grid);
    }
    return RankedPrediction::from_scores(vg.weights, grid, std::min(top_k, voted));
}

std::int64_t HoughConfig::resolved_min_votes(int width, int height) const {
    if (min_votes) {
        return *min_votes;
    }
    const double longest_segment = 0.5 * std::min(width, height);
    return static_cast<std::int64_t>(std::ceil(0.3 * longest_segment));
}

std::vector<HoughLine> detect_lines(const ImageRaster& img, const HoughConfig& cfg) {
    const EdgeMap edges = sobel_edges(img, cfg.edge_threshold);
    const HoughAccumulator acc = hough_transform(edges, cfg.theta_bins, cfg.rho_resolution);
    auto peaks = extract_peaks(acc, cfg.max_lines, cfg.resolved_min_votes(img.width(), img.height()), cfg.nms_radius);
    if (!cfg.fit) {
        return peaks;
    }
    return fit_lines(peaks, edges, cfg.fit_options);
}

RankedPrediction detect_hough(const ImageRaster& img, const GridSpec& grid, const HoughConfig& cfg,
                              std::size_t top_k) {
    if (img.width() != grid.width() || img.height() != grid.height()) {
        throw DomainError("image size does not match the grid");
    }
    return vote_vp(detect_lines(img, cfg), grid, top_k);
}

CenterMode parse_center_mode(const std::string& name) {
    if (name == "top1") {
        return CenterMode::top1;
    }
    if (name == "top5") {
        return CenterMode::top5;
    }
    throw DomainError("unknown center mode '" + name + "'");
}

RankedPrediction center_baseline(std::span<const CellIndex> train_labels, const GridSpec& grid,
                                 CenterMode mode) {
    if (train_labels.empty()) {
        throw DomainError("center baseline needs at least one training label");
    }
    std::vector<int> histogram(static_cast<std::size_t>(grid.class_count()), 0);
    for (CellIndex c : train_labels) {
        ++histogram[linearize(c, grid)];
    }
    // max_element returns the first maximum, i.e. the smallest index on ties
    const auto best = static_cast<int>(std::max_element(histogram.begin(), histogram.end()) - histogram.begin());
    const CellIndex mode_cell = delinearize(best, grid);

    std::vector<CellIndex> cells{mode_cell};
    if (mode == CenterMode::top5) {
        // x = col, y = row: [x y], [x-1 y], [x y-1], [x+1 y], [x y+1]
        const CellIndex around[] = {{mode_cell.row, mode_cell.col - 1},
                                    {mode_cell.row - 1, mode_cell.col},
                                    {mode_cell.row, mode_cell.col + 1},
                                    {mode_cell.row + 1, mode_cell.col}};
        for (CellIndex c : around) {
            if (is_valid(c, grid)) {
                cells.push_back(c);
            }
        }
    }
    std::vector<ScoredCell> entries;
    for (std::size_t rank = 0; rank < cells.size(); ++rank) {
        entries.push_back({cells[rank], 1.0 - 0.2 * static_cast<double>(rank)});
    }
    return RankedPrediction::from_ordered(std::move(entries), grid);
}

} // namespace vpgrid
