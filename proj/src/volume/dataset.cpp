#include "cmc/volume/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wdeprecated-enum-enum-conversion"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#pragma GCC diagnostic pop

#include "cmc/core/random.hpp"

namespace fs = std::filesystem;

namespace cmc {

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw InvalidArgument("unknown split '" + s + "'");
}

namespace {

bool is_slice_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        cells.push_back(cell);
    }
    return cells;
}

int parse_label(const std::string& s, const std::string& where) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw InvalidArgument(where + ": label must be 0 or 1, got '" + s + "'");
}

}  // namespace

CTVolume load_scan(const ScanRecord& record) {
    if (!fs::exists(record.path)) throw NotFound("scan path does not exist: " + record.path.string());
    if (!fs::is_directory(record.path))
        throw MalformedScan("scan path is not a directory: " + record.path.string());

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(record.path))
        if (e.is_regular_file() && is_slice_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MalformedScan("no slice images in " + record.path.string());

    std::vector<cv::Mat> slices;
    slices.reserve(files.size());
    for (const auto& f : files) {
        cv::Mat img = cv::imread(f.string(), cv::IMREAD_GRAYSCALE);
        if (img.empty()) throw MalformedScan("unreadable slice " + f.string());
        if (!slices.empty() && (img.rows != slices[0].rows || img.cols != slices[0].cols))
            throw MalformedScan("ragged slice shape in " + f.string() + ": " + std::to_string(img.rows) +
                                "x" + std::to_string(img.cols) + " vs " + std::to_string(slices[0].rows) +
                                "x" + std::to_string(slices[0].cols));
        slices.push_back(std::move(img));
    }

    CTVolume v(Shape3{int(slices.size()), slices[0].rows, slices[0].cols});
    v.scan_id = record.scan_id;
    for (int t = 0; t < v.depth(); ++t) {
        const cv::Mat& img = slices[t];
        for (int y = 0; y < img.rows; ++y) {
            const auto* row = img.ptr<std::uint8_t>(y);
            for (int x = 0; x < img.cols; ++x) v(t, y, x) = Real(row[x]) / Real(255);
        }
    }
    return v;
}

void write_scan(const CTVolume& v, const fs::path& dir) {
    fs::create_directories(dir);
    for (int t = 0; t < v.depth(); ++t) {
        cv::Mat img(v.height(), v.width(), CV_8U);
        for (int y = 0; y < v.height(); ++y) {
            auto* row = img.ptr<std::uint8_t>(y);
            for (int x = 0; x < v.width(); ++x)
                row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(v(t, y, x), Real(0), Real(1)) * 255));
        }
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", t);
        if (!cv::imwrite((dir / name).string(), img))
            throw InvalidArgument("failed to write slice " + (dir / name).string());
    }
}

void quantize_8bit(CTVolume& v) {
    v.array() = (v.array().max(Real(0)).min(Real(1)) * 255).round() / 255;
}

std::vector<ScanRecord> read_labels(const fs::path& root) {
    const fs::path file = root / "labels.csv";
    std::ifstream in(file);
    if (!in) throw NotFound("labels file not found: " + file.string());
    std::string line;
    std::getline(in, line);
    if (split_csv_line(line) != std::vector<std::string>{"scan_id", "label"})
        throw InvalidArgument(file.string() + ": header must be 'scan_id,label'");
    std::vector<ScanRecord> out;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 2) throw InvalidArgument(file.string() + ": malformed row '" + line + "'");
        if (!seen.insert(cells[0]).second) throw InvalidArgument("duplicate scan_id " + cells[0]);
        out.push_back({cells[0], parse_label(cells[1], file.string()), root / cells[0]});
    }
    return out;
}

void write_labels(const fs::path& root, const std::vector<ScanRecord>& records) {
    fs::create_directories(root);
    std::ofstream out(root / "labels.csv");
    out << "scan_id,label\n";
    for (const auto& r : records) out << r.scan_id << ',' << r.label << '\n';
}

std::vector<ManifestEntry> read_manifest(const fs::path& file, const fs::path& root) {
    std::ifstream in(file);
    if (!in) throw NotFound("manifest not found: " + file.string());
    std::string line;
    std::getline(in, line);
    if (split_csv_line(line) != std::vector<std::string>{"scan_id", "label", "split"})
        throw InvalidArgument(file.string() + ": header must be 'scan_id,label,split'");
    std::vector<ManifestEntry> out;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 3) throw InvalidArgument(file.string() + ": malformed row '" + line + "'");
        if (!seen.insert(cells[0]).second) throw InvalidArgument("duplicate scan_id " + cells[0]);
        out.push_back({{cells[0], parse_label(cells[1], file.string()), root / cells[0]}, parse_split(cells[2])});
    }
    return out;
}

void write_manifest(const fs::path& file, const std::vector<ManifestEntry>& entries) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    out << "scan_id,label,split\n";
    for (const auto& e : entries)
        out << e.record.scan_id << ',' << e.record.label << ',' << to_string(e.split) << '\n';
}

std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> split_manifest(
    const std::vector<ScanRecord>& records, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidArgument("train fraction must lie in (0,1)");
    std::map<int, std::vector<std::size_t>> by_class;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label != 0 && records[i].label != 1)
            throw InvalidArgument("label must be 0 or 1 for " + records[i].scan_id);
        if (!ids.insert(records[i].scan_id).second)
            throw InvalidArgument("duplicate scan_id " + records[i].scan_id);
        by_class[records[i].label].push_back(i);
    }
    for (const auto& [label, idx] : by_class)
        if (idx.size() < 2)
            throw StratificationError("class " + std::to_string(label) + " has " +
                                      std::to_string(idx.size()) + " record(s); need at least 2");

    // Largest-remainder allocation keeps the overall train count at
    // round(fraction * total) while staying stratified.
    const auto total_train = static_cast<std::size_t>(std::llround(train_fraction * double(records.size())));
    std::map<int, std::size_t> quota;
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (const auto& [label, idx] : by_class) {
        const double exact = train_fraction * double(idx.size());
        quota[label] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[label];
        remainders.emplace_back(exact - std::floor(exact), label);
    }
    std::sort(remainders.begin(), remainders.end(),
              [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t k = 0; assigned < total_train && k < remainders.size(); ++k, ++assigned)
        ++quota[remainders[k].second];
    for (auto& [label, q] : quota) q = std::clamp<std::size_t>(q, 1, by_class[label].size() - 1);

    std::vector<char> is_train(records.size(), 0);
    for (auto& [label, idx] : by_class) {
        auto rng = derive_rng({seed, std::uint64_t(label), 0x5917});
        auto shuffled = idx;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (std::size_t k = 0; k < quota[label]; ++k) is_train[shuffled[k]] = 1;
    }
    std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        (is_train[i] ? out.first : out.second).push_back(records[i]);
    return out;
}

std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> split_manifest(
    const std::vector<ScanRecord>& records, std::pair<double, double> fractions, std::uint64_t seed) {
    if (fractions.first < 0 || fractions.second < 0 || std::abs(fractions.first + fractions.second - 1.0) > 1e-9)
        throw InvalidArgument("split fractions must be nonnegative and sum to 1");
    return split_manifest(records, fractions.first, seed);
}

}  // namespace cmc
