#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "swinmil/mask.hpp"

namespace swinmil {

/// Dice coefficient over foreground pixels: 2|P&G| / (|P| + |G|).
/// Both masks empty counts as perfect agreement (1.0).
double f1_score(const BinaryMask& pred, const BinaryMask& gt);

/// Dice with background as the target class, for negative images:
/// 2 TN / (2 TN + FP). A clean all-background prediction scores 1.0.
double f1_negative(const BinaryMask& pred);

struct HausdorffResult {
    double value = 0.0;
    bool defined = true;  // false when exactly one mask has no foreground
};

/// Symmetric Hausdorff distance between foreground point sets, Euclidean
/// norm on integer (row, col) centers. Both sets empty -> 0; one empty ->
/// undefined.
HausdorffResult hausdorff(const BinaryMask& pred, const BinaryMask& gt);

struct ImageEval {
    std::string id;
    int label = 0;
    double f1 = 0.0;
    double hd = 0.0;
    bool hd_defined = false;
    double seconds = 0.0;
};

struct EvalReport {
    int num_pos = 0;
    int num_neg = 0;
    double f1_pos = 0.0;
    double hd_pos = 0.0;
    int hd_pos_undefined_count = 0;
    double f1_neg = 0.0;
    double runtime_per_image_s = 0.0;
    std::vector<ImageEval> per_image;

    bool has_pos() const { return num_pos > 0; }
    bool has_neg() const { return num_neg > 0; }
    bool has_hd() const;
};

/// Aggregates per-image results into dataset-level means (positives for
/// f1_pos/hd_pos, negatives for f1_neg; undefined HDs are counted and
/// excluded).
EvalReport aggregate_report(std::vector<ImageEval> per_image);

/// Line-oriented report: one "img" line per image, then the machine-readable
/// key=value block (keys: f1_pos, hd_pos, hd_pos_undefined_count, f1_neg,
/// runtime_per_image_s). Absent columns render as "n/a".
std::string format_report(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace swinmil
