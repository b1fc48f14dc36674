#include "vpgrid/dataset.hpp"

#include "vpgrid/error.hpp"
#include "vpgrid/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vpgrid {

const char* to_string(Split split) noexcept {
    return split == Split::train ? "train" : "test";
}

std::vector<GridSpec> DatasetManifest::grid_specs() const {
    std::vector<GridSpec> out;
    for (int n : grids) {
        out.emplace_back(width, height, n);
    }
    return out;
}

std::vector<const ManifestEntry*> DatasetManifest::select(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == split) {
            out.push_back(&e);
        }
    }
    return out;
}

void DatasetManifest::validate() const {
    if (width <= 0 || height <= 0) {
        throw DomainError("manifest image size must be positive");
    }
    (void)grid_specs(); // throws on an invalid grid
    std::set<std::string> paths;
    for (const auto& e : entries) {
        if (e.has_vp != e.vp.has_value()) {
            throw DomainError("manifest entry " + e.path + ": has_vp disagrees with the VP fields");
        }
        if (!paths.insert(e.path).second) {
            throw DomainError("duplicate manifest path " + e.path);
        }
    }
}

static std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string format_manifest(const DatasetManifest& manifest) {
    manifest.validate();
    std::ostringstream out;
    out << "vpgrid-manifest\nversion 1\n";
    out << "size " << manifest.width << ' ' << manifest.height << '\n';
    out << "grids";
    for (int n : manifest.grids) {
        out << ' ' << n;
    }
    out << "\nentries " << manifest.entries.size() << '\n';
    for (const auto& e : manifest.entries) {
        out << e.path << ' ' << to_string(e.split) << ' ' << (e.has_vp ? 1 : 0) << ' ';
        if (e.vp) {
            out << fixed6(e.vp->x) << ' ' << fixed6(e.vp->y);
        } else {
            out << "- -";
        }
        out << ' ' << e.seed << '\n';
    }
    return out.str();
}

namespace {

class LineCursor {
public:
    explicit LineCursor(const std::string& text) : text_(text) {}

    bool at_end() const noexcept { return pos_ >= text_.size(); }
    std::size_t line_offset() const noexcept { return line_start_; }

    std::vector<std::string> next_fields() {
        if (at_end()) {
            throw ParseError("manifest ends early", pos_);
        }
        line_start_ = pos_;
        std::size_t eol = text_.find('\n', pos_);
        if (eol == std::string::npos) {
            eol = text_.size();
        }
        std::istringstream line(text_.substr(pos_, eol - pos_));
        pos_ = eol + 1;
        std::vector<std::string> fields;
        for (std::string f; line >> f;) {
            fields.push_back(f);
        }
        return fields;
    }

private:
    const std::string& text_;
    std::size_t pos_ = 0;
    std::size_t line_start_ = 0;
};

template <class T>
T parse_number(const std::string& s, std::size_t offset) {
    std::istringstream in(s);
    T v{};
    in >> v;
    if (!in || !in.eof()) {
        throw ParseError("manifest: bad number '" + s + "'", offset);
    }
    return v;
}

} // namespace

DatasetManifest parse_manifest(const std::string& text) {
    LineCursor cursor(text);
    auto expect = [&](const std::string& key, std::size_t min_fields) {
        auto f = cursor.next_fields();
        if (f.empty() || f[0] != key || f.size() < min_fields) {
            throw ParseError("manifest: expected '" + key + "' line", cursor.line_offset());
        }
        return f;
    };

    expect("vpgrid-manifest", 1);
    const auto version = expect("version", 2);
    if (version[1] != "1") {
        throw ParseError("manifest: unsupported version " + version[1], cursor.line_offset());
    }
    DatasetManifest m;
    const auto size = expect("size", 3);
    m.width = parse_number<int>(size[1], cursor.line_offset());
    m.height = parse_number<int>(size[2], cursor.line_offset());
    const auto grids = expect("grids", 1);
    for (std::size_t i = 1; i < grids.size(); ++i) {
        m.grids.push_back(parse_number<int>(grids[i], cursor.line_offset()));
    }
    const auto count_line = expect("entries", 2);
    const auto count = parse_number<std::size_t>(count_line[1], cursor.line_offset());

    m.entries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto f = cursor.next_fields();
        const std::size_t off = cursor.line_offset();
        if (f.size() != 6) {
            throw ParseError("manifest entry needs 6 fields", off);
        }
        ManifestEntry e;
        e.path = f[0];
        if (f[1] == "train") {
            e.split = Split::train;
        } else if (f[1] == "test") {
            e.split = Split::test;
        } else {
            throw ParseError("manifest: bad split '" + f[1] + "'", off);
        }
        if (f[2] != "0" && f[2] != "1") {
            throw ParseError("manifest: has_vp must be 0 or 1", off);
        }
        e.has_vp = f[2] == "1";
        if (e.has_vp) {
            e.vp = PixelPoint{parse_number<double>(f[3], off), parse_number<double>(f[4], off)};
        } else if (f[3] != "-" || f[4] != "-") {
            throw ParseError("manifest: entry without VP must use '-' coordinates", off);
        }
        e.seed = parse_number<std::uint64_t>(f[5], off);
        m.entries.push_back(std::move(e));
    }
    try {
        m.validate();
    } catch (const DomainError& err) {
        throw ParseError(std::string("manifest: ") + err.what(), 0);
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    const std::string text = format_manifest(manifest);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw IoError("cannot write manifest " + path.string());
    }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str());
}

int train_count(int class_total, double train_fraction) {
    return static_cast<int>(std::floor(class_total * train_fraction));
}

static std::string sample_name(const char* prefix, int index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "images/%s_%06d.pgm", prefix, index);
    return buf;
}

static DatasetManifest plan_dataset(const DatasetRequest& request, std::uint64_t seed) {
    if (!(request.train_fraction > 0.0 && request.train_fraction < 1.0)) {
        throw DomainError("train fraction must lie strictly between 0 and 1");
    }
    if (request.n_pos < 0 || request.n_neg < 0) {
        throw DomainError("sample counts must be non-negative");
    }
    request.params.validate();

    DatasetManifest m;
    m.width = request.params.width;
    m.height = request.params.height;
    m.grids = request.grids;
    (void)m.grid_specs();

    // Per class, a seeded shuffle decides which samples train.
    Rng split_rng(seed);
    auto assign = [&](int first, int total, bool positive) {
        std::vector<int> order(static_cast<std::size_t>(total));
        for (int i = 0; i < total; ++i) {
            order[i] = i;
        }
        for (int i = total - 1; i > 0; --i) {
            std::swap(order[i], order[split_rng.uniform_int(0, i)]);
        }
        std::vector<Split> split(static_cast<std::size_t>(total), Split::test);
        const int n_train = train_count(total, request.train_fraction);
        for (int i = 0; i < n_train; ++i) {
            split[order[i]] = Split::train;
        }
        for (int i = 0; i < total; ++i) {
            ManifestEntry e;
            const int index = first + i;
            e.path = sample_name(positive ? "pos" : "neg", index);
            e.split = split[i];
            e.has_vp = positive;
            e.seed = sample_seed(seed, static_cast<std::uint64_t>(index));
            m.entries.push_back(std::move(e));
        }
    };
    assign(0, request.n_pos, true);
    assign(request.n_pos, request.n_neg, false);
    return m;
}

DatasetManifest build_dataset(const DatasetRequest& request, std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
    DatasetManifest m = plan_dataset(request, seed);
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) {
        throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
    }
    for (auto& e : m.entries) {
        if (e.has_vp) {
            PositiveSample s = generate_positive(request.params, e.seed);
            e.vp = s.vp;
            write_pgm(s.image, out_dir / e.path);
        } else {
            write_pgm(generate_negative(request.params, e.seed).image, out_dir / e.path);
        }
    }
    write_manifest(m, out_dir / kManifestFileName);
    return m;
}

} // namespace vpgrid
