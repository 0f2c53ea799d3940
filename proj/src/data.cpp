#include "swinmil/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "swinmil/rng.hpp"

namespace swinmil {

namespace {

namespace fs = std::filesystem;

struct PgmPixels {
    Index h = 0, w = 0;
    std::vector<std::uint8_t> bytes;
};

// P5 parser: "P5", whitespace-separated width/height/maxval with optional
// '#' comments, one whitespace byte, then raw pixels. Errors carry the byte
// offset of the offending data.
PgmPixels parse_pgm(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_pgm: cannot open " + path.string());
    std::string raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    auto fail = [&](const std::string& why, std::size_t at) -> void {
        throw std::runtime_error("load_pgm(" + path.string() + "): " + why + " at byte offset " +
                                 std::to_string(at));
    };
    auto skip_space = [&] {
        while (pos < raw.size()) {
            const char c = raw[pos];
            if (c == '#') {
                while (pos < raw.size() && raw[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> long {
        skip_space();
        const std::size_t start = pos;
        long v = 0;
        while (pos < raw.size() && raw[pos] >= '0' && raw[pos] <= '9') {
            v = v * 10 + (raw[pos] - '0');
            ++pos;
        }
        if (pos == start) fail("expected integer", start);
        return v;
    };

    if (raw.size() < 2 || raw[0] != 'P' || raw[1] != '5') fail("not a P5 PGM", 0);
    pos = 2;
    const long w = read_int();
    const long h = read_int();
    const std::size_t maxval_at = pos;
    const long maxval = read_int();
    if (w <= 0 || h <= 0) fail("non-positive dimensions", 2);
    if (maxval != 255) {
        fail("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
    }
    if (pos >= raw.size()) fail("missing pixel data", pos);
    const char sep = raw[pos];
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') {
        fail("expected whitespace after maxval", pos);
    }
    ++pos;

    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (raw.size() - pos < need) fail("truncated pixel data", raw.size());

    PgmPixels out;
    out.h = h;
    out.w = w;
    out.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(pos),
                     raw.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return out;
}

void write_pgm(const fs::path& path, Index h, Index w, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_pgm: cannot open " + path.string());
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("save_pgm: write failed for " + path.string());
}

// Smooth band-limited background: a coarse value-noise lattice sampled
// bilinearly, plus faint per-pixel grain.
std::vector<float> background(Index size, SplitMix64& rng) {
    const Index cell = 8;
    const Index nodes = size / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(nodes * nodes));
    for (auto& v : lattice) v = rng.uniform();

    std::vector<float> img(static_cast<std::size_t>(size * size));
    for (Index i = 0; i < size; ++i) {
        const double fy = static_cast<double>(i) / cell;
        const Index y0 = static_cast<Index>(fy);
        const double ty = fy - static_cast<double>(y0);
        for (Index j = 0; j < size; ++j) {
            const double fx = static_cast<double>(j) / cell;
            const Index x0 = static_cast<Index>(fx);
            const double tx = fx - static_cast<double>(x0);
            const double n00 = lattice[y0 * nodes + x0];
            const double n01 = lattice[y0 * nodes + x0 + 1];
            const double n10 = lattice[(y0 + 1) * nodes + x0];
            const double n11 = lattice[(y0 + 1) * nodes + x0 + 1];
            const double n = (1 - ty) * ((1 - tx) * n00 + tx * n01) +
                             ty * ((1 - tx) * n10 + tx * n11);
            img[i * size + j] = static_cast<float>(0.32 + 0.12 * (n - 0.5));
        }
    }
    for (auto& v : img) v += static_cast<float>((rng.uniform() - 0.5) * 0.04);
    return img;
}

struct Ellipse {
    double cy, cx, ry, rx, cos_t, sin_t;
    bool contains(Index i, Index j) const {
        const double dy = static_cast<double>(i) - cy;
        const double dx = static_cast<double>(j) - cx;
        const double u = (dx * cos_t + dy * sin_t) / rx;
        const double v = (-dx * sin_t + dy * cos_t) / ry;
        return u * u + v * v <= 1.0;
    }
};

// Lesion mask: one or two random ellipses, resampled until the union covers
// between 8% and 50% of the image. Lesions are kept large enough that even
// the coarsest decoder grid can outline them.
BinaryMask lesion_mask(Index size, SplitMix64& rng) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        const int count = 1 + static_cast<int>(rng.below(2));
        std::vector<Ellipse> shapes;
        for (int e = 0; e < count; ++e) {
            Ellipse el;
            el.cy = rng.uniform(0.25, 0.75) * static_cast<double>(size);
            el.cx = rng.uniform(0.25, 0.75) * static_cast<double>(size);
            el.ry = rng.uniform(0.22, 0.34) * static_cast<double>(size);
            el.rx = rng.uniform(0.22, 0.34) * static_cast<double>(size);
            const double theta = rng.uniform(0.0, 3.141592653589793);
            el.cos_t = std::cos(theta);
            el.sin_t = std::sin(theta);
            shapes.push_back(el);
        }
        BinaryMask mask(size, size);
        Index fg = 0;
        for (Index i = 0; i < size; ++i) {
            for (Index j = 0; j < size; ++j) {
                for (const auto& el : shapes) {
                    if (el.contains(i, j)) {
                        mask.set(i, j, true);
                        ++fg;
                        break;
                    }
                }
            }
        }
        const double frac = static_cast<double>(fg) / static_cast<double>(size * size);
        if (frac >= 0.08 && frac <= 0.5) return mask;
    }
    throw std::runtime_error("generate_synthetic: could not sample a lesion mask in bounds");
}

std::vector<std::uint8_t> quantize(const std::vector<float>& img) {
    std::vector<std::uint8_t> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, img[i]));
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return bytes;
}

void render_image(Index size, bool positive, std::uint64_t seed, std::vector<std::uint8_t>& bytes,
                  BinaryMask& mask) {
    SplitMix64 rng(seed);
    std::vector<float> img = background(size, rng);
    if (positive) {
        mask = lesion_mask(size, rng);
        // Lesion texture: a mild mean shift plus strong high-frequency
        // speckle. Keeping the brightness shift small stops the bag label
        // from being readable off the global mean, so the decoders must key
        // on local texture rather than broadcast a bag flag.
        for (Index i = 0; i < size; ++i) {
            for (Index j = 0; j < size; ++j) {
                if (mask.at(i, j)) {
                    img[i * size + j] +=
                        static_cast<float>(0.10 + (rng.uniform() - 0.5) * 0.50);
                }
            }
        }
    } else {
        mask = BinaryMask(size, size);
    }
    bytes = quantize(img);
}

}  // namespace

std::vector<ManifestEntry> DatasetManifest::split_entries(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        if (e.split == split) out.push_back(e);
    }
    return out;
}

Tensor<float> load_pgm(const std::filesystem::path& path) {
    const PgmPixels px = parse_pgm(path);
    Tensor<float> img(Shape{px.h, px.w, 1});
    for (std::size_t i = 0; i < px.bytes.size(); ++i) {
        img.data()[i] = static_cast<float>(px.bytes[i]) / 255.0f;
    }
    return img;
}

void save_pgm(const std::filesystem::path& path, const Tensor<float>& image) {
    if (image.rank() != 2 && !(image.rank() == 3 && image.dim(2) == 1)) {
        throw std::invalid_argument("save_pgm: expected [H,W] or [H,W,1], got " +
                                    shape_str(image.shape()));
    }
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.size()));
    for (Index i = 0; i < image.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, image.data()[i]));
        bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    write_pgm(path, image.dim(0), image.dim(1), bytes);
}

BinaryMask load_pgm_mask(const std::filesystem::path& path) {
    const PgmPixels px = parse_pgm(path);
    BinaryMask mask(px.h, px.w);
    for (std::size_t i = 0; i < px.bytes.size(); ++i) mask.fg[i] = px.bytes[i] >= 128 ? 1 : 0;
    return mask;
}

void save_pgm_mask(const std::filesystem::path& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> bytes(mask.fg.size());
    for (std::size_t i = 0; i < mask.fg.size(); ++i) bytes[i] = mask.fg[i] ? 255 : 0;
    write_pgm(path, mask.h, mask.w, bytes);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_manifest: cannot open " + path.string());

    DatasetManifest manifest;
    manifest.root = path.parent_path();
    std::set<std::string> seen_images;

    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fail = [&](const std::string& why) -> void {
            throw std::runtime_error("load_manifest(" + path.string() + "): " + why + " at line " +
                                     std::to_string(line_no));
        };

        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cols.size() != 4) {
            fail("expected 4 TAB-separated columns, got " + std::to_string(cols.size()));
        }
        ManifestEntry e;
        if (cols[0] == "0") {
            e.label = 0;
        } else if (cols[0] == "1") {
            e.label = 1;
        } else {
            fail("label must be 0 or 1, got '" + cols[0] + "'");
        }
        e.split = cols[1];
        e.image_path = cols[2];
        e.mask_path = (cols[3] == "-") ? std::string() : cols[3];
        if (e.split.empty() || e.image_path.empty()) fail("empty split or image path");
        if (!seen_images.insert(e.image_path).second) {
            fail("duplicate image path '" + e.image_path + "'");
        }
        if (!fs::exists(manifest.root / e.image_path)) {
            throw std::runtime_error("load_manifest: missing image file " +
                                     (manifest.root / e.image_path).string());
        }
        if (!e.mask_path.empty() && !fs::exists(manifest.root / e.mask_path)) {
            throw std::runtime_error("load_manifest: missing mask file " +
                                     (manifest.root / e.mask_path).string());
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

DatasetManifest generate_synthetic(const GenConfig& cfg) {
    if (cfg.num_pos < 0 || cfg.num_neg < 0 || cfg.test_pos < 0 || cfg.test_neg < 0) {
        throw std::invalid_argument("generate_synthetic: counts must be non-negative");
    }
    if (cfg.size < 16) {
        throw std::invalid_argument("generate_synthetic: size must be at least 16");
    }
    fs::create_directories(cfg.out_dir / "images");
    fs::create_directories(cfg.out_dir / "masks");

    DatasetManifest manifest;
    manifest.root = cfg.out_dir;

    std::uint64_t ordinal = 0;
    auto emit = [&](int label, const std::string& split, int index) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%s_%04d", label ? "pos" : "neg", split.c_str(),
                      index);
        std::vector<std::uint8_t> bytes;
        BinaryMask mask;
        render_image(cfg.size, label == 1, SplitMix64::mix(cfg.seed, ordinal++), bytes, mask);

        ManifestEntry e;
        e.label = label;
        e.split = split;
        e.image_path = std::string("images/") + name + ".pgm";
        write_pgm(cfg.out_dir / e.image_path, cfg.size, cfg.size, bytes);
        if (label == 1) {
            e.mask_path = std::string("masks/") + name + ".pgm";
            save_pgm_mask(cfg.out_dir / e.mask_path, mask);
        }
        manifest.entries.push_back(std::move(e));
    };

    for (int i = 0; i < cfg.num_pos; ++i) emit(1, "train", i);
    for (int i = 0; i < cfg.num_neg; ++i) emit(0, "train", i);
    for (int i = 0; i < cfg.test_pos; ++i) emit(1, "test", i);
    for (int i = 0; i < cfg.test_neg; ++i) emit(0, "test", i);

    std::ofstream os(cfg.out_dir / "manifest.tsv", std::ios::binary);
    if (!os) {
        throw std::runtime_error("generate_synthetic: cannot write manifest in " +
                                 cfg.out_dir.string());
    }
    for (const auto& e : manifest.entries) {
        os << e.label << '\t' << e.split << '\t' << e.image_path << '\t'
           << (e.mask_path.empty() ? "-" : e.mask_path) << '\n';
    }
    return manifest;
}

std::vector<TrainBag> load_training_split(const DatasetManifest& manifest,
                                          const std::string& split) {
    std::vector<TrainBag> bags;
    for (const auto& e : manifest.split_entries(split)) {
        TrainBag bag;
        bag.image = load_pgm(manifest.root / e.image_path);
        bag.label = e.label;
        bag.id = e.image_path;
        bags.push_back(std::move(bag));
    }
    return bags;
}

std::vector<EvalBag> load_eval_split(const DatasetManifest& manifest, const std::string& split) {
    std::vector<EvalBag> bags;
    for (const auto& e : manifest.split_entries(split)) {
        EvalBag bag;
        bag.image = load_pgm(manifest.root / e.image_path);
        bag.label = e.label;
        bag.id = e.image_path;
        if (e.label == 1) {
            if (e.mask_path.empty()) {
                throw std::runtime_error("load_eval_split: positive image " + e.image_path +
                                         " has no ground-truth mask");
            }
            bag.gt = load_pgm_mask(manifest.root / e.mask_path);
        } else {
            bag.gt = BinaryMask(bag.image.dim(0), bag.image.dim(1));
        }
        bags.push_back(std::move(bag));
    }
    return bags;
}

}  // namespace swinmil
