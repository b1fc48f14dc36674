#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vpgrid {

/// Single-channel row-major image with intensities in [0,1].
class ImageRaster {
public:
    ImageRaster() = default;
    ImageRaster(int width, int height, double fill = 0.0);
    ImageRaster(int width, int height, std::vector<double> pixels);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return pixels_.empty(); }

    double at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    double& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    /// Pixel with coordinates clamped into the frame (replicated border).
    double clamped(int x, int y) const;

    std::span<const double> pixels() const noexcept { return pixels_; }
    std::span<double> pixels() noexcept { return pixels_; }

    /// Clamps every pixel into [0,1].
    void clamp01() noexcept;

    double mean() const noexcept;

    friend bool operator==(const ImageRaster&, const ImageRaster&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> pixels_;
};

/// Byte value written for an intensity: round-half-up of v*255.
std::uint8_t quantize_byte(double v) noexcept;

/// Image quantized to the 8-bit levels a PGM file can hold.
ImageRaster quantize_8bit(const ImageRaster& img);

/// Binary P5 encoding, maxval 255.
std::vector<std::uint8_t> encode_pgm(const ImageRaster& img);
ImageRaster decode_pgm(std::span<const std::uint8_t> bytes);

void write_pgm(const ImageRaster& img, const std::filesystem::path& path);
ImageRaster read_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace vpgrid
