#pragma once

#include "vpgrid/geometry.hpp"
#include "vpgrid/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vpgrid {

/// Knobs for synthetic scene generation.
struct SceneParams {
    int width = 64;
    int height = 64;
    int n_converging = 8;
    int n_distractor = 0;
    /// Std-dev of the VP around the image center, pixels.
    double vp_prior_sigma = 6.4;
    double noise_sigma = 0.0;
    double line_intensity = 0.9;
    double background_intensity = 0.2;
    double line_thickness = 1.0;
    /// Negative-scene content: parallel line gratings and soft blobs.
    int n_gratings = 1;
    int n_blobs = 2;

    /// Defaults for a given frame, with the VP prior at 10% of the width.
    static SceneParams for_size(int width, int height);

    void validate() const;
};

struct Segment {
    PixelPoint a;
    PixelPoint b;
};

struct Blob {
    PixelPoint center;
    double sigma = 1.0;
    double amplitude = 0.0;
};

/// Noise-free geometric content of a scene; rendering it is deterministic.
struct Scene {
    int width = 0;
    int height = 0;
    double background = 0.0;
    double line_intensity = 1.0;
    double line_thickness = 1.0;
    std::vector<Segment> lines;
    std::vector<Blob> blobs;
};

/// A pixel touched by a rasterized segment and its coverage in (0,1].
struct CoveredPixel {
    int x = 0;
    int y = 0;
    double coverage = 0.0;
};

/// Pixels covered by an anti-aliased segment of the given thickness.
/// Pixel (x, y) is sampled at integer coordinates; coverage falls off
/// linearly over one pixel beyond half the thickness.
std::vector<CoveredPixel> rasterize_segment(const Segment& seg, double thickness, int width, int height);

ImageRaster render(const Scene& scene);

struct PositiveSample {
    ImageRaster image;
    PixelPoint vp;
    Scene scene;
    /// Indices into scene.lines of the segments that pass through the VP.
    std::vector<std::size_t> converging;
};

struct NegativeSample {
    ImageRaster image;
    Scene scene;
};

PositiveSample generate_positive(const SceneParams& params, std::uint64_t seed);
NegativeSample generate_negative(const SceneParams& params, std::uint64_t seed);

/// True if some three of the (infinite) lines through `lines` meet within
/// `tolerance` pixels of a common point inside the frame.
bool has_concurrent_triple(const std::vector<Segment>& lines, int width, int height, double tolerance);

enum class AugmentKind { jitter, crop, noise, blur };

/// Affine map x' = sx*x + tx, y' = sy*y + ty carrying VP labels into the
/// augmented frame.
struct LabelTransform {
    double sx = 1.0;
    double sy = 1.0;
    double tx = 0.0;
    double ty = 0.0;

    PixelPoint apply(PixelPoint p) const noexcept { return {sx * p.x + tx, sy * p.y + ty}; }
    bool is_identity() const noexcept { return sx == 1.0 && sy == 1.0 && tx == 0.0 && ty == 0.0; }
};

struct Augmented {
    ImageRaster image;
    LabelTransform label_transform;
};

/// Magnitude meaning per kind: jitter, max shift in pixels per axis; crop,
/// pixels removed from each dimension before rescaling back; noise, Gaussian
/// std-dev; blur, box-kernel radius (rounded half up).
Augmented augment(const ImageRaster& img, AugmentKind kind, double magnitude, std::uint64_t seed);

/// Shifts the viewing window by (dx, dy): out(x, y) = in(x + dx, y + dy),
/// border replicated.
Augmented jitter(const ImageRaster& img, int dx, int dy);
/// Crops the window [ox, ox+cw) x [oy, oy+ch) and rescales it bilinearly
/// to the original size.
Augmented crop_rescale(const ImageRaster& img, int ox, int oy, int cw, int ch);
ImageRaster box_blur(const ImageRaster& img, int radius);

AugmentKind parse_augment_kind(const std::string& name);

} // namespace vpgrid
