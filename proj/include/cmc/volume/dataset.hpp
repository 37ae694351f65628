#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cmc/volume/volume.hpp"

namespace cmc {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// One scan in a dataset: identifier, class (0 = non-COVID, 1 = COVID) and
/// the directory holding its slice images.
struct ScanRecord {
    std::string scan_id;
    int label = 0;
    std::filesystem::path path;
};

struct ManifestEntry {
    ScanRecord record;
    Split split = Split::Train;
};

/// Load a scan directory. Slices are the .png/.jpg/.jpeg files of the
/// directory in lexicographic order, read as 8-bit grayscale and divided
/// by 255.
CTVolume load_scan(const ScanRecord& record);

/// Write a volume as zero-padded 8-bit PNG slices (`0000.png`, ...).
void write_scan(const CTVolume& v, const std::filesystem::path& dir);

/// Round every voxel to the nearest k/255, matching what a PNG round trip
/// produces.
void quantize_8bit(CTVolume& v);

/// `labels.csv` with header `scan_id,label`; paths resolve to root/scan_id.
std::vector<ScanRecord> read_labels(const std::filesystem::path& root);
void write_labels(const std::filesystem::path& root, const std::vector<ScanRecord>& records);

/// Manifest CSV with header `scan_id,label,split`.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file,
                                         const std::filesystem::path& root);
void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries);

/// Per-class stratified split. The train side holds round(train_fraction * n)
/// records, allocated over classes by largest remainder, with at least one
/// record of each class on each side.
/// Deterministic per seed; order within each side follows the input order.
std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> split_manifest(
    const std::vector<ScanRecord>& records, double train_fraction, std::uint64_t seed);

/// Convenience overload taking a (train, val) fraction pair; the pair must
/// sum to 1.
std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> split_manifest(
    const std::vector<ScanRecord>& records, std::pair<double, double> fractions,
    std::uint64_t seed);

}  // namespace cmc
