#pragma once

#include "vpgrid/geometry.hpp"
#include "vpgrid/scenegen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vpgrid {

enum class Split { train, test };

const char* to_string(Split split) noexcept;

struct ManifestEntry {
    std::string path; ///< relative to the manifest's directory
    Split split = Split::train;
    bool has_vp = false;
    std::optional<PixelPoint> vp;
    std::uint64_t seed = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Index of a generated dataset.
///
/// Text layout, one item per line, fields separated by single spaces:
///
///     vpgrid-manifest
///     version 1
///     size <width> <height>
///     grids <n> [<n> ...]
///     entries <count>
///     <path> <train|test> <0|1> <vp_x|-> <vp_y|-> <seed>
///
/// VP coordinates carry six decimals.
struct DatasetManifest {
    int width = 0;
    int height = 0;
    std::vector<int> grids;
    std::vector<ManifestEntry> entries;

    std::vector<GridSpec> grid_specs() const;
    std::vector<const ManifestEntry*> select(Split split) const;

    void validate() const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

std::string format_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct DatasetRequest {
    int n_pos = 0;
    int n_neg = 0;
    double train_fraction = 0.88;
    SceneParams params;
    std::vector<int> grids{8};
};

/// Number of a class's samples that land in the training split.
int train_count(int class_total, double train_fraction);

/// Per-sample generator seed.
constexpr std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index) noexcept {
    return dataset_seed ^ index;
}

/// Generates every image under `out_dir/images` and writes
/// `out_dir/manifest.txt`. Positives take sample indices [0, n_pos),
/// negatives the rest; within each class a shuffle seeded by `seed` picks
/// the train_count(...) training samples.
DatasetManifest build_dataset(const DatasetRequest& request, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

inline constexpr const char* kManifestFileName = "manifest.txt";

} // namespace vpgrid
