#include "vpgrid/cli.hpp"

#include "vpgrid/classical.hpp"
#include "vpgrid/dataset.hpp"
#include "vpgrid/error.hpp"
#include "vpgrid/eval.hpp"
#include "vpgrid/nn.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace vpgrid {

namespace fs = std::filesystem;

namespace {

struct GenOptions {
    std::string out;
    int pos = 10;
    int neg = 10;
    int size = 64;
    std::vector<int> grids;
    std::uint64_t seed = 0;
    double train_frac = 0.88;
    int converging = 8;
    int distractors = 0;
    double noise = 0.0;
    std::optional<double> vp_sigma;
    double thickness = 1.0;
    double line_intensity = 0.9;
    double background = 0.2;
};

struct TrainOptions {
    std::string task;
    std::string manifest;
    std::optional<int> grid;
    int epochs = 20;
    double lr = 0.01;
    double momentum = 0.9;
    int batch = 16;
    int jitter = 0;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> init_seed;
    std::string model_out;
};

struct DetectOptions {
    std::string method;
    std::vector<std::string> models;
    std::string image;
    std::string manifest;
    std::string split = "test";
    std::optional<int> grid;
    std::size_t topk = 5;
    std::string overlay_dir;
    double edge_threshold = HoughConfig{}.edge_threshold;
};

struct BaselineOptions {
    std::string mode = "top1";
    std::string manifest;
    std::optional<int> grid;
};

struct EvalOptions {
    std::string manifest;
    std::vector<std::string> methods{"hough", "center"};
    std::vector<int> grids;
    std::vector<std::string> models;
    std::string existence_model;
    std::string report;
    double edge_threshold = HoughConfig{}.edge_threshold;
};

struct ReportOptions {
    std::string in;
    std::string tsv_out;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw IoError("cannot write " + path.string());
    }
}

GridSpec pick_grid(const DatasetManifest& m, std::optional<int> n) {
    if (n) {
        return GridSpec(m.width, m.height, *n);
    }
    if (m.grids.empty()) {
        throw DomainError("manifest lists no grids; pass --grid");
    }
    return GridSpec(m.width, m.height, m.grids.front());
}

std::vector<CellIndex> train_cells(const DatasetManifest& m, const GridSpec& grid) {
    std::vector<CellIndex> cells;
    for (const ManifestEntry* e : m.select(Split::train)) {
        if (e->has_vp) {
            cells.push_back(pixel_to_cell(*e->vp, grid));
        }
    }
    return cells;
}

// Localization models keyed by class count.
std::map<int, nn::Network> load_models(const std::vector<std::string>& paths) {
    std::map<int, nn::Network> models;
    for (const auto& p : paths) {
        nn::Network net = nn::load_model(p);
        const int classes = net.head_classes();
        models.insert_or_assign(classes, std::move(net));
    }
    return models;
}

const nn::Network& model_for(const std::map<int, nn::Network>& models, const GridSpec& grid) {
    const auto it = models.find(grid.class_count());
    if (it == models.end()) {
        throw DomainError("no --model with a " + std::to_string(grid.class_count()) + "-class head for grid " +
                          std::to_string(grid.n()));
    }
    return it->second;
}

int cmd_gen(const GenOptions& o, std::ostream& out) {
    DatasetRequest req;
    req.n_pos = o.pos;
    req.n_neg = o.neg;
    req.train_fraction = o.train_frac;
    req.params = SceneParams::for_size(o.size, o.size);
    req.params.n_converging = o.converging;
    req.params.n_distractor = o.distractors;
    req.params.noise_sigma = o.noise;
    if (o.vp_sigma) {
        req.params.vp_prior_sigma = *o.vp_sigma;
    }
    req.params.line_thickness = o.thickness;
    req.params.line_intensity = o.line_intensity;
    req.params.background_intensity = o.background;
    if (!o.grids.empty()) {
        req.grids = o.grids;
    } else if (o.size == 300) {
        req.grids = {10, 20, 30};
    } else {
        req.grids = {8};
    }
    const DatasetManifest m = build_dataset(req, o.seed, o.out);
    out << "wrote " << m.entries.size() << " entries (" << m.select(Split::train).size() << " train, "
        << m.select(Split::test).size() << " test) to " << (fs::path(o.out) / kManifestFileName).string() << '\n';
    return kExitOk;
}

int cmd_train(const TrainOptions& o, std::ostream& out) {
    const fs::path manifest_path = o.manifest;
    const DatasetManifest m = read_manifest(manifest_path);
    const GridSpec grid = pick_grid(m, o.grid);
    const nn::Task task = nn::parse_task(o.task);
    const int head = task == nn::Task::existence ? 2 : grid.class_count();
    nn::Network net({1, m.height, m.width}, nn::reference_architecture(head), o.init_seed.value_or(o.seed));

    nn::TrainConfig cfg;
    cfg.learning_rate = o.lr;
    cfg.momentum = o.momentum;
    cfg.batch_size = o.batch;
    cfg.jitter = o.jitter;
    cfg.epochs = o.epochs;
    cfg.seed = o.seed;
    const nn::TrainResult r = nn::train(std::move(net), m, manifest_path.parent_path(), task, grid, cfg);
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "epoch %zu loss %.6f\n", e + 1, r.loss_curve[e]);
        out << buf;
    }
    nn::save_model(r.net, o.model_out);
    return kExitOk;
}

int cmd_detect(const DetectOptions& o, std::ostream& out) {
    std::optional<DatasetManifest> manifest;
    fs::path manifest_dir;
    if (!o.manifest.empty()) {
        manifest = read_manifest(o.manifest);
        manifest_dir = fs::path(o.manifest).parent_path();
    }
    std::vector<std::pair<std::string, ImageRaster>> images;
    if (!o.image.empty()) {
        images.emplace_back(o.image, read_pgm(o.image));
    } else if (manifest) {
        const Split split = o.split == "train" ? Split::train : Split::test;
        for (const ManifestEntry* e : manifest->select(split)) {
            images.emplace_back(e->path, read_pgm(manifest_dir / e->path));
        }
    } else {
        throw DomainError("detect needs --image or --manifest");
    }
    if (images.empty()) {
        throw DomainError("no images selected");
    }
    const int width = images.front().second.width();
    const int height = images.front().second.height();
    std::optional<GridSpec> grid;
    if (o.grid) {
        grid.emplace(width, height, *o.grid);
    } else if (manifest && !manifest->grids.empty()) {
        grid.emplace(width, height, manifest->grids.front());
    } else {
        throw DomainError("detect needs --grid");
    }

    std::optional<RankedPrediction> center;
    std::map<int, nn::Network> models;
    if (o.method == "center") {
        if (!manifest) {
            throw DomainError("center method needs --manifest for its training labels");
        }
        const auto cells = train_cells(*manifest, *grid);
        center = center_baseline(cells, *grid, CenterMode::top5);
    } else if (o.method == "cnn") {
        models = load_models(o.models);
    }
    HoughConfig hough;
    hough.edge_threshold = o.edge_threshold;

    if (!o.overlay_dir.empty()) {
        fs::create_directories(o.overlay_dir);
    }
    out << "image\trank\trow\tcol\tscore\n";
    for (const auto& [name, img] : images) {
        if (img.width() != width || img.height() != height) {
            throw DomainError("image " + name + " differs in size from the first image");
        }
        RankedPrediction pred = [&] {
            if (o.method == "hough") {
                return detect_hough(img, *grid, hough, o.topk);
            }
            if (o.method == "center") {
                std::vector<ScoredCell> kept(center->entries().begin(),
                                             center->entries().begin() +
                                                 static_cast<std::ptrdiff_t>(std::min(o.topk, center->size())));
                return RankedPrediction::from_ordered(std::move(kept), *grid);
            }
            return nn::predict_localization(model_for(models, *grid), img, *grid, o.topk);
        }();
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const ScoredCell& s = pred.entries()[i];
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.6g", s.score);
            out << name << '\t' << i + 1 << '\t' << s.cell.row << '\t' << s.cell.col << '\t' << buf << '\n';
        }
        if (!o.overlay_dir.empty()) {
            const ImageRaster overlay = render_overlay(img, pred, OverlayStyle::for_grid(*grid));
            write_pgm(overlay, fs::path(o.overlay_dir) / (fs::path(name).stem().string() + "_overlay.pgm"));
        }
    }
    return kExitOk;
}

struct TestSet {
    std::vector<ImageRaster> images;
    std::vector<PixelPoint> vps;
    std::vector<ImageRaster> all_images;
    std::vector<bool> all_has_vp;
};

TestSet load_test_set(const DatasetManifest& m, const fs::path& dir, bool with_negatives) {
    TestSet t;
    for (const ManifestEntry* e : m.select(Split::test)) {
        if (!e->has_vp && !with_negatives) {
            continue;
        }
        ImageRaster img = read_pgm(dir / e->path);
        if (e->has_vp) {
            t.images.push_back(img);
            t.vps.push_back(*e->vp);
        }
        if (with_negatives) {
            t.all_images.push_back(std::move(img));
            t.all_has_vp.push_back(e->has_vp);
        }
    }
    return t;
}

int cmd_baseline(const BaselineOptions& o, std::ostream& out) {
    const DatasetManifest m = read_manifest(o.manifest);
    const GridSpec grid = pick_grid(m, o.grid);
    const CenterMode mode = parse_center_mode(o.mode);
    const RankedPrediction pred = center_baseline(train_cells(m, grid), grid, mode);
    out << "rank\trow\tcol\n";
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out << i + 1 << '\t' << pred.entries()[i].cell.row << '\t' << pred.entries()[i].cell.col << '\n';
    }
    const TestSet test = load_test_set(m, fs::path(o.manifest).parent_path(), false);
    if (!test.vps.empty()) {
        std::vector<RankedPrediction> preds(test.vps.size(), pred);
        std::vector<CellIndex> truths;
        for (const PixelPoint& vp : test.vps) {
            truths.push_back(pixel_to_cell(vp, grid));
        }
        EvalReport report;
        report.rows.push_back(evaluate(preds, truths, grid));
        report.rows.back().method = "center-" + o.mode;
        out << '\n' << format_report_table(report);
    }
    return kExitOk;
}

EvalReport run_evaluation(const DatasetManifest& m, const fs::path& dir, const EvalOptions& o) {
    const std::vector<int> grids = o.grids.empty() ? m.grids : o.grids;
    if (grids.empty()) {
        throw DomainError("no grids to evaluate; pass --grids");
    }
    const bool want_existence = !o.existence_model.empty();
    const TestSet test = load_test_set(m, dir, want_existence);
    if (test.vps.empty()) {
        throw DomainError("test split has no positive samples");
    }
    const auto models = load_models(o.models);
    HoughConfig hough;
    hough.edge_threshold = o.edge_threshold;

    EvalReport report;
    for (int n : grids) {
        const GridSpec grid(m.width, m.height, n);
        std::vector<CellIndex> truths;
        for (const PixelPoint& vp : test.vps) {
            truths.push_back(pixel_to_cell(vp, grid));
        }
        for (const std::string& method : o.methods) {
            std::vector<RankedPrediction> preds;
            if (method == "center") {
                const RankedPrediction center = center_baseline(train_cells(m, grid), grid, CenterMode::top5);
                preds.assign(test.images.size(), center);
            } else if (method == "hough") {
                for (const ImageRaster& img : test.images) {
                    preds.push_back(detect_hough(img, grid, hough, 5));
                }
            } else if (method == "cnn") {
                const nn::Network& net = model_for(models, grid);
                for (const ImageRaster& img : test.images) {
                    preds.push_back(nn::predict_localization(net, img, grid, 5));
                }
            } else {
                throw DomainError("unknown method '" + method + "'");
            }
            EvalRow row = evaluate(preds, truths, grid);
            row.method = method;
            report.rows.push_back(std::move(row));
        }
    }
    if (want_existence) {
        const nn::Network net = nn::load_model(o.existence_model);
        std::vector<double> probs;
        for (const ImageRaster& img : test.all_images) {
            probs.push_back(nn::predict_existence(net, img));
        }
        const std::size_t n = test.all_has_vp.size();
        const auto truths = std::make_unique<bool[]>(n);
        std::copy(test.all_has_vp.begin(), test.all_has_vp.end(), truths.get());
        const ExistenceCounts c = evaluate_existence(probs, std::span<const bool>(truths.get(), n));
        report.existence.push_back({"cnn", c.count, c.correct});
    }
    return report;
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
    const DatasetManifest m = read_manifest(o.manifest);
    const EvalReport report = run_evaluation(m, fs::path(o.manifest).parent_path(), o);
    if (!o.report.empty()) {
        write_text(o.report, format_report_tsv(report));
    }
    out << format_report_table(report);
    return kExitOk;
}

int cmd_report(const ReportOptions& o, std::ostream& out) {
    const EvalReport report = parse_report_tsv(read_text(o.in));
    out << format_report_table(report);
    if (!o.tsv_out.empty()) {
        write_text(o.tsv_out, format_report_tsv(report));
    }
    return kExitOk;
}

} // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Vanishing-point detection by grid classification", "vpgrid"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset and its manifest");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--pos", gen.pos, "Positive scenes")->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--neg", gen.neg, "Negative scenes")->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--size", gen.size, "Square image side in pixels")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--grid", gen.grids, "Grid sides recorded in the manifest")->delimiter(',');
    gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
    gen_cmd->add_option("--train-frac", gen.train_frac, "Training fraction per class");
    gen_cmd->add_option("--converging", gen.converging, "Lines through the VP");
    gen_cmd->add_option("--distractors", gen.distractors, "Random distractor lines");
    gen_cmd->add_option("--noise", gen.noise, "Gaussian pixel noise std-dev");
    gen_cmd->add_option("--vp-sigma", gen.vp_sigma, "VP prior std-dev in pixels (default 10% of size)");
    gen_cmd->add_option("--thickness", gen.thickness, "Line thickness in pixels");
    gen_cmd->add_option("--line-intensity", gen.line_intensity, "Line intensity in [0,1]");
    gen_cmd->add_option("--background", gen.background, "Background intensity in [0,1]");

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train an existence or localization network");
    train_cmd->add_option("--task", tr.task, "existence | localization")
        ->required()
        ->check(CLI::IsMember({"existence", "localization"}));
    train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
    train_cmd->add_option("--grid", tr.grid, "Grid side (default: first manifest grid)");
    train_cmd->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--lr", tr.lr, "Learning rate");
    train_cmd->add_option("--momentum", tr.momentum, "SGD momentum");
    train_cmd->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--jitter", tr.jitter, "Random shift augmentation, pixels")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--seed", tr.seed, "Shuffle seed");
    train_cmd->add_option("--init-seed", tr.init_seed, "Weight init seed (default: --seed)");
    train_cmd->add_option("--model-out", tr.model_out, "Model file to write")->required();

    DetectOptions det;
    auto* detect_cmd = app.add_subcommand("detect", "Rank grid cells for images");
    detect_cmd->add_option("--method", det.method, "cnn | hough | center")
        ->required()
        ->check(CLI::IsMember({"cnn", "hough", "center"}));
    detect_cmd->add_option("--model", det.models, "Localization model (cnn)");
    detect_cmd->add_option("--image", det.image, "Single PGM image");
    detect_cmd->add_option("--manifest", det.manifest, "Dataset manifest (labels for center, images otherwise)");
    detect_cmd->add_option("--manifest-split", det.split, "Split of --manifest to run on")
        ->check(CLI::IsMember({"train", "test"}));
    detect_cmd->add_option("--grid", det.grid, "Grid side");
    detect_cmd->add_option("--topk", det.topk, "Cells to report")->check(CLI::PositiveNumber);
    detect_cmd->add_option("--overlay-dir", det.overlay_dir, "Write overlay PGMs here");
    detect_cmd->add_option("--edge-threshold", det.edge_threshold, "Sobel threshold (hough)");

    BaselineOptions base;
    auto* baseline_cmd = app.add_subcommand("baseline", "Center-prior baseline from training labels");
    baseline_cmd->add_option("--mode", base.mode, "top1 | top5")->check(CLI::IsMember({"top1", "top5"}));
    baseline_cmd->add_option("--manifest", base.manifest, "Dataset manifest")->required();
    baseline_cmd->add_option("--grid", base.grid, "Grid side");

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "Top-1/top-5 error of methods over grids");
    eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--methods", ev.methods, "Comma-separated: cnn,hough,center")
        ->delimiter(',')
        ->check(CLI::IsMember({"cnn", "hough", "center"}));
    eval_cmd->add_option("--grids", ev.grids, "Comma-separated grid sides (default: manifest grids)")
        ->delimiter(',');
    eval_cmd->add_option("--model", ev.models, "Localization model(s), matched to grids by head size");
    eval_cmd->add_option("--existence-model", ev.existence_model, "Existence model");
    eval_cmd->add_option("--report", ev.report, "Write the tab-separated report here");
    eval_cmd->add_option("--edge-threshold", ev.edge_threshold, "Sobel threshold (hough)");

    ReportOptions rep;
    auto* report_cmd = app.add_subcommand("report", "Format a saved report");
    report_cmd->add_option("--in", rep.in, "Tab-separated report")->required();
    report_cmd->add_option("--tsv-out", rep.tsv_out, "Re-write the report here");

    std::vector<std::string> argv_store{"vpgrid"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) {
        argv.push_back(a.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            return cmd_gen(gen, out);
        }
        if (train_cmd->parsed()) {
            return cmd_train(tr, out);
        }
        if (detect_cmd->parsed()) {
            if (det.image.empty() && det.manifest.empty()) {
                err << "detect: pass --image or --manifest\n";
                return kExitUsage;
            }
            return cmd_detect(det, out);
        }
        if (baseline_cmd->parsed()) {
            return cmd_baseline(base, out);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(ev, out);
        }
        if (report_cmd->parsed()) {
            return cmd_report(rep, out);
        }
    } catch (const std::exception& e) {
        err << "vpgrid: " << e.what() << '\n';
        return kExitDomain;
    }
    return kExitUsage;
}

} // namespace vpgrid
