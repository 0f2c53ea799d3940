#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "swinmil/mask.hpp"
#include "swinmil/tensor.hpp"

namespace swinmil {

/// A training bag: the image and its image-level label, nothing else.
/// Ground-truth masks are deliberately absent from this type — the trainer
/// consumes TrainBag only, so pixel supervision cannot leak in.
struct TrainBag {
    Tensor<float> image;  // [H, W, 1] in [0, 1]
    int label = 0;        // 1 = positive, 0 = negative
    std::string id;
};

/// An evaluation bag additionally carries the pixel ground truth.
struct EvalBag {
    Tensor<float> image;
    int label = 0;
    std::string id;
    BinaryMask gt;  // empty-foreground for negatives
};

struct ManifestEntry {
    int label = 0;
    std::string split;
    std::string image_path;  // relative to the manifest's directory
    std::string mask_path;   // empty when the manifest column is "-"
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split_entries(const std::string& split) const;
};

/// Parses a TAB-separated manifest (label, split, image, mask-or-dash),
/// verifying that every referenced file exists and no image repeats.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// P5 binary PGM, maxval 255. Pixels map to [0, 1] as v / 255.
Tensor<float> load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const Tensor<float>& image);

BinaryMask load_pgm_mask(const std::filesystem::path& path);
void save_pgm_mask(const std::filesystem::path& path, const BinaryMask& mask);

struct GenConfig {
    std::filesystem::path out_dir;
    int num_pos = 0;       // training positives
    int num_neg = 0;       // training negatives
    int test_pos = 0;
    int test_neg = 0;
    Index size = 64;
    std::uint64_t seed = 0;
};

/// Writes a seeded synthetic dataset: smooth textured backgrounds for
/// negatives, plus 1-3 brighter high-frequency ellipses (with exact masks)
/// for positives. Byte-identical output for identical configs.
DatasetManifest generate_synthetic(const GenConfig& cfg);

/// Loads a split for training. Reads image files only; mask paths are never
/// opened on this code path.
std::vector<TrainBag> load_training_split(const DatasetManifest& manifest,
                                          const std::string& split);

/// Loads a split with ground truth for evaluation. Positives must have a
/// mask; negatives get an empty-foreground mask.
std::vector<EvalBag> load_eval_split(const DatasetManifest& manifest, const std::string& split);

}  // namespace swinmil
