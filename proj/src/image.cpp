#include "vpgrid/image.hpp"

#include "vpgrid/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace vpgrid {

ImageRaster::ImageRaster(int width, int height, double fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw DomainError("image dimensions must be positive");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

ImageRaster::ImageRaster(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width <= 0 || height <= 0) {
        throw DomainError("image dimensions must be positive");
    }
    if (pixels_.size() != static_cast<std::size_t>(width) * height) {
        throw DomainError("pixel count does not match dimensions");
    }
}

double ImageRaster::clamped(int x, int y) const {
    return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
}

void ImageRaster::clamp01() noexcept {
    for (double& v : pixels_) {
        v = std::clamp(v, 0.0, 1.0);
    }
}

double ImageRaster::mean() const noexcept {
    if (pixels_.empty()) {
        return 0.0;
    }
    return std::accumulate(pixels_.begin(), pixels_.end(), 0.0) / static_cast<double>(pixels_.size());
}

std::uint8_t quantize_byte(double v) noexcept {
    const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::floor(scaled + 0.5));
}

ImageRaster quantize_8bit(const ImageRaster& img) {
    ImageRaster out = img;
    for (double& v : out.pixels()) {
        v = quantize_byte(v) / 255.0;
    }
    return out;
}

std::vector<std::uint8_t> encode_pgm(const ImageRaster& img) {
    const std::string header =
        "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(header.size() + img.pixels().size());
    for (double v : img.pixels()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw DomainError("pixel value outside [0,1] cannot be written as PGM");
        }
        bytes.push_back(quantize_byte(v));
    }
    return bytes;
}

namespace {

class HeaderReader {
public:
    HeaderReader(std::span<const std::uint8_t> bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

    std::size_t offset() const noexcept { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
                    ++pos_;
                }
            } else {
                break;
            }
        }
    }

    int read_int(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1'000'000'000L) {
                throw ParseError(std::string("PGM ") + what + " too large", start);
            }
            ++pos_;
        }
        if (pos_ == start) {
            throw ParseError(std::string("PGM header: expected ") + what, start);
        }
        return static_cast<int>(value);
    }

    void expect_single_whitespace() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw ParseError("PGM header: expected whitespace before raster", pos_);
        }
        ++pos_;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_;
};

} // namespace

ImageRaster decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw ParseError("not a binary PGM (missing P5 magic)", 0);
    }
    HeaderReader reader(bytes, 2);
    const int width = reader.read_int("width");
    const int height = reader.read_int("height");
    reader.skip_space_and_comments();
    const std::size_t maxval_offset = reader.offset();
    const int maxval = reader.read_int("maxval");
    if (width <= 0 || height <= 0) {
        throw ParseError("PGM dimensions must be positive", 2);
    }
    if (maxval != 255) {
        throw ParseError("unsupported PGM maxval " + std::to_string(maxval) + " (only 255)", maxval_offset);
    }
    reader.expect_single_whitespace();
    const std::size_t data_start = reader.offset();
    const std::size_t count = static_cast<std::size_t>(width) * height;
    if (bytes.size() - data_start < count) {
        throw ParseError("truncated PGM raster: expected " + std::to_string(count) + " bytes", bytes.size());
    }
    std::vector<double> pixels(count);
    for (std::size_t i = 0; i < count; ++i) {
        pixels[i] = bytes[data_start + i] / 255.0;
    }
    return ImageRaster(width, height, std::move(pixels));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string() + " for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

void write_pgm(const ImageRaster& img, const std::filesystem::path& path) {
    write_file_bytes(path, encode_pgm(img));
}

ImageRaster read_pgm(const std::filesystem::path& path) {
    return decode_pgm(read_file_bytes(path));
}

} // namespace vpgrid
