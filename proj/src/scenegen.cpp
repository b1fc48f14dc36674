#include "vpgrid/scenegen.hpp"

#include "vpgrid/error.hpp"
#include "vpgrid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace vpgrid {

SceneParams SceneParams::for_size(int width, int height) {
    SceneParams p;
    p.width = width;
    p.height = height;
    p.vp_prior_sigma = 0.1 * width;
    return p;
}

void SceneParams::validate() const {
    if (width <= 0 || height <= 0) {
        throw DomainError("scene dimensions must be positive");
    }
    if (n_distractor < 0 || n_gratings < 0 || n_blobs < 0) {
        throw DomainError("content counts must be non-negative");
    }
    if (!(vp_prior_sigma >= 0.0) || !(noise_sigma >= 0.0)) {
        throw DomainError("sigmas must be non-negative");
    }
    if (!(line_intensity >= 0.0 && line_intensity <= 1.0) ||
        !(background_intensity >= 0.0 && background_intensity <= 1.0)) {
        throw DomainError("intensities must lie in [0,1]");
    }
    if (!(line_thickness >= 1.0)) {
        throw DomainError("line thickness must be at least 1 pixel");
    }
}

static double distance_to_segment(double px, double py, const Segment& s) {
    const double dx = s.b.x - s.a.x;
    const double dy = s.b.y - s.a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) {
        t = std::clamp(((px - s.a.x) * dx + (py - s.a.y) * dy) / len2, 0.0, 1.0);
    }
    return std::hypot(px - (s.a.x + t * dx), py - (s.a.y + t * dy));
}

std::vector<CoveredPixel> rasterize_segment(const Segment& seg, double thickness, int width, int height) {
    const double reach = thickness / 2.0 + 0.5;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(seg.a.x, seg.b.x) - reach)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(seg.a.x, seg.b.x) + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(seg.a.y, seg.b.y) - reach)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(seg.a.y, seg.b.y) + reach)));

    std::vector<CoveredPixel> out;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double c = std::clamp(reach - distance_to_segment(x, y, seg), 0.0, 1.0);
            if (c > 0.0) {
                out.push_back({x, y, c});
            }
        }
    }
    return out;
}

ImageRaster render(const Scene& scene) {
    ImageRaster img(scene.width, scene.height, scene.background);
    for (const Blob& b : scene.blobs) {
        const double reach = 3.0 * b.sigma;
        const int x0 = std::max(0, static_cast<int>(std::floor(b.center.x - reach)));
        const int x1 = std::min(scene.width - 1, static_cast<int>(std::ceil(b.center.x + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(b.center.y - reach)));
        const int y1 = std::min(scene.height - 1, static_cast<int>(std::ceil(b.center.y + reach)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double r2 = (x - b.center.x) * (x - b.center.x) + (y - b.center.y) * (y - b.center.y);
                img.at(x, y) += b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
            }
        }
    }
    for (const Segment& s : scene.lines) {
        for (const CoveredPixel& p : rasterize_segment(s, scene.line_thickness, scene.width, scene.height)) {
            double& v = img.at(p.x, p.y);
            v += p.coverage * (scene.line_intensity - v);
        }
    }
    img.clamp01();
    return img;
}

namespace {

Scene empty_scene(const SceneParams& params) {
    Scene scene;
    scene.width = params.width;
    scene.height = params.height;
    scene.background = params.background_intensity;
    scene.line_intensity = params.line_intensity;
    scene.line_thickness = params.line_thickness;
    return scene;
}

// Point where the ray from `origin` along `angle` leaves [0,w-1] x [0,h-1].
PixelPoint ray_exit(PixelPoint origin, double angle, int width, int height) {
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    double t = std::numeric_limits<double>::infinity();
    if (dx > 1e-12) {
        t = std::min(t, (width - 1 - origin.x) / dx);
    } else if (dx < -1e-12) {
        t = std::min(t, -origin.x / dx);
    }
    if (dy > 1e-12) {
        t = std::min(t, (height - 1 - origin.y) / dy);
    } else if (dy < -1e-12) {
        t = std::min(t, -origin.y / dy);
    }
    return {origin.x + t * dx, origin.y + t * dy};
}

Segment random_segment(Rng& rng, int width, int height) {
    const double min_len = 0.25 * std::min(width, height);
    for (;;) {
        Segment s{{rng.uniform(0.0, width - 1.0), rng.uniform(0.0, height - 1.0)},
                  {rng.uniform(0.0, width - 1.0), rng.uniform(0.0, height - 1.0)}};
        if (std::hypot(s.b.x - s.a.x, s.b.y - s.a.y) >= min_len) {
            return s;
        }
    }
}

void add_noise(ImageRaster& img, double sigma, Rng& rng) {
    if (sigma > 0.0) {
        for (double& v : img.pixels()) {
            v += sigma * rng.normal();
        }
    }
    img.clamp01();
}

double round6(double v) {
    return std::round(v * 1e6) / 1e6;
}

} // namespace

PositiveSample generate_positive(const SceneParams& params, std::uint64_t seed) {
    params.validate();
    if (params.n_converging < 2) {
        throw DomainError("a positive scene needs at least two converging lines");
    }
    Rng rng(seed);
    const double w = params.width;
    const double h = params.height;

    // Clamped to the central 80% and rounded to the manifest's 6 decimals so
    // the stored label is the exact ground truth.
    PositiveSample out;
    out.vp.x = round6(std::clamp(rng.normal(w / 2.0, params.vp_prior_sigma), 0.1 * w, 0.9 * w));
    out.vp.y = round6(std::clamp(rng.normal(h / 2.0, params.vp_prior_sigma), 0.1 * h, 0.9 * h));

    Scene scene = empty_scene(params);
    // Stratified angles keep rays from collapsing onto each other.
    const double sector = 2.0 * std::numbers::pi / params.n_converging;
    const double offset = rng.uniform(0.0, sector);
    for (int i = 0; i < params.n_converging; ++i) {
        const double angle = offset + sector * (i + rng.uniform(0.15, 0.85));
        out.converging.push_back(scene.lines.size());
        scene.lines.push_back({out.vp, ray_exit(out.vp, angle, params.width, params.height)});
    }
    for (int i = 0; i < params.n_distractor; ++i) {
        scene.lines.push_back(random_segment(rng, params.width, params.height));
    }

    out.image = render(scene);
    add_noise(out.image, params.noise_sigma, rng);
    out.scene = std::move(scene);
    return out;
}

bool has_concurrent_triple(const std::vector<Segment>& lines, int width, int height, double tolerance) {
    const std::size_t n = lines.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d1x = lines[i].b.x - lines[i].a.x;
            const double d1y = lines[i].b.y - lines[i].a.y;
            const double d2x = lines[j].b.x - lines[j].a.x;
            const double d2y = lines[j].b.y - lines[j].a.y;
            const double cross = d1x * d2y - d1y * d2x;
            const double norm = std::hypot(d1x, d1y) * std::hypot(d2x, d2y);
            if (norm == 0.0 || std::abs(cross) < 1e-6 * norm) {
                continue;
            }
            const double t = ((lines[j].a.x - lines[i].a.x) * d2y - (lines[j].a.y - lines[i].a.y) * d2x) / cross;
            const double px = lines[i].a.x + t * d1x;
            const double py = lines[i].a.y + t * d1y;
            if (px < 0.0 || py < 0.0 || px >= width || py >= height) {
                continue;
            }
            for (std::size_t k = 0; k < n; ++k) {
                if (k == i || k == j) {
                    continue;
                }
                const double dkx = lines[k].b.x - lines[k].a.x;
                const double dky = lines[k].b.y - lines[k].a.y;
                const double len = std::hypot(dkx, dky);
                if (len == 0.0) {
                    continue;
                }
                const double dist = std::abs((px - lines[k].a.x) * dky - (py - lines[k].a.y) * dkx) / len;
                if (dist < tolerance) {
                    return true;
                }
            }
        }
    }
    return false;
}

NegativeSample generate_negative(const SceneParams& params, std::uint64_t seed) {
    params.validate();
    Rng rng(seed);
    const int w = params.width;
    const int h = params.height;
    constexpr double concurrency_tolerance = 1.0;

    Scene scene = empty_scene(params);
    for (int g = 0; g < params.n_gratings; ++g) {
        const bool horizontal = rng.uniform() < 0.5;
        const int spacing = rng.uniform_int(5, 9);
        const double pw = rng.uniform(0.25, 0.5) * (w - 1);
        const double ph = rng.uniform(0.25, 0.5) * (h - 1);
        const double px = rng.uniform(0.0, w - 1 - pw);
        const double py = rng.uniform(0.0, h - 1 - ph);
        std::vector<Segment> grating;
        if (horizontal) {
            for (double y = py; y <= py + ph; y += spacing) {
                grating.push_back({{px, y}, {px + pw, y}});
            }
        } else {
            for (double x = px; x <= px + pw; x += spacing) {
                grating.push_back({{x, py}, {x, py + ph}});
            }
        }
        std::vector<Segment> candidate = scene.lines;
        candidate.insert(candidate.end(), grating.begin(), grating.end());
        if (!has_concurrent_triple(candidate, w, h, concurrency_tolerance)) {
            scene.lines = std::move(candidate);
        }
    }
    for (int b = 0; b < params.n_blobs; ++b) {
        Blob blob;
        blob.center = {rng.uniform(0.1 * w, 0.9 * w), rng.uniform(0.1 * h, 0.9 * h)};
        blob.sigma = rng.uniform(1.5, 3.5);
        blob.amplitude = (params.line_intensity - params.background_intensity) * rng.uniform(0.4, 0.8);
        scene.blobs.push_back(blob);
    }
    constexpr int max_attempts = 200;
    for (int d = 0; d < params.n_distractor; ++d) {
        for (int attempt = 0; attempt < max_attempts; ++attempt) {
            scene.lines.push_back(random_segment(rng, w, h));
            if (!has_concurrent_triple(scene.lines, w, h, concurrency_tolerance)) {
                break;
            }
            scene.lines.pop_back();
        }
    }

    NegativeSample out;
    out.image = render(scene);
    add_noise(out.image, params.noise_sigma, rng);
    out.scene = std::move(scene);
    return out;
}

Augmented jitter(const ImageRaster& img, int dx, int dy) {
    ImageRaster out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            out.at(x, y) = img.clamped(x + dx, y + dy);
        }
    }
    return {std::move(out), LabelTransform{1.0, 1.0, -static_cast<double>(dx), -static_cast<double>(dy)}};
}

Augmented crop_rescale(const ImageRaster& img, int ox, int oy, int cw, int ch) {
    if (cw <= 0 || ch <= 0 || ox < 0 || oy < 0 || ox + cw > img.width() || oy + ch > img.height()) {
        throw DomainError("crop window exceeds the image");
    }
    const int w = img.width();
    const int h = img.height();
    const double sx = static_cast<double>(w) / cw;
    const double sy = static_cast<double>(h) / ch;
    ImageRaster out(w, h);
    for (int y = 0; y < h; ++y) {
        const double src_y = oy + y / sy;
        const int y0 = static_cast<int>(std::floor(src_y));
        const double fy = src_y - y0;
        for (int x = 0; x < w; ++x) {
            const double src_x = ox + x / sx;
            const int x0 = static_cast<int>(std::floor(src_x));
            const double fx = src_x - x0;
            const double top = (1.0 - fx) * img.clamped(x0, y0) + fx * img.clamped(x0 + 1, y0);
            const double bottom = (1.0 - fx) * img.clamped(x0, y0 + 1) + fx * img.clamped(x0 + 1, y0 + 1);
            out.at(x, y) = (1.0 - fy) * top + fy * bottom;
        }
    }
    out.clamp01();
    return {std::move(out), LabelTransform{sx, sy, -ox * sx, -oy * sy}};
}

ImageRaster box_blur(const ImageRaster& img, int radius) {
    if (radius <= 0) {
        return img;
    }
    const double norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
    ImageRaster out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            // offsets from the center pixel keep flat regions exact
            const double c = img.at(x, y);
            double sum = 0.0;
            for (int ky = -radius; ky <= radius; ++ky) {
                for (int kx = -radius; kx <= radius; ++kx) {
                    sum += img.clamped(x + kx, y + ky) - c;
                }
            }
            out.at(x, y) = c + sum * norm;
        }
    }
    out.clamp01();
    return out;
}

Augmented augment(const ImageRaster& img, AugmentKind kind, double magnitude, std::uint64_t seed) {
    if (!(magnitude >= 0.0)) {
        throw DomainError("augmentation magnitude must be non-negative");
    }
    Rng rng(seed);
    const int steps = static_cast<int>(std::floor(magnitude + 0.5));
    switch (kind) {
    case AugmentKind::jitter: {
        const int dx = rng.uniform_int(-steps, steps);
        const int dy = rng.uniform_int(-steps, steps);
        return jitter(img, dx, dy);
    }
    case AugmentKind::crop: {
        if (steps >= img.width() || steps >= img.height()) {
            throw DomainError("crop of " + std::to_string(steps) + " px is larger than the image");
        }
        if (steps == 0) {
            return {img, {}};
        }
        const int ox = rng.uniform_int(0, steps);
        const int oy = rng.uniform_int(0, steps);
        return crop_rescale(img, ox, oy, img.width() - steps, img.height() - steps);
    }
    case AugmentKind::noise: {
        ImageRaster out = img;
        add_noise(out, magnitude, rng);
        return {std::move(out), {}};
    }
    case AugmentKind::blur:
        return {box_blur(img, steps), {}};
    }
    throw DomainError("unknown augmentation kind");
}

AugmentKind parse_augment_kind(const std::string& name) {
    if (name == "jitter") {
        return AugmentKind::jitter;
    }
    if (name == "crop") {
        return AugmentKind::crop;
    }
    if (name == "noise") {
        return AugmentKind::noise;
    }
    if (name == "blur") {
        return AugmentKind::blur;
    }
    throw DomainError("unknown augmentation kind '" + name + "'");
}

} // namespace vpgrid
