#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmc/model/checkpoint.hpp"
#include "cmc/model/model.hpp"
#include "cmc/train/training.hpp"
#include "cmc/volume/phantom.hpp"

namespace cmc {

/// Every accepted key with its default value. Config files and overrides
/// may only set keys present here.
nlohmann::json default_config();

/// Merges `overlay` into `base`. Unknown keys and type mismatches raise
/// InvalidConfig naming the dotted key.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& prefix = "");

/// Reads a JSON config on top of the defaults. A top-level "extends" string
/// names a parent file (relative to this one) that is applied first.
nlohmann::json load_config_file(const std::filesystem::path& file);

/// Applies `key.sub=value`. The value is parsed as JSON when possible and
/// taken as a plain string otherwise.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

/// FNV-1a of the canonical (key-sorted, compact) dump with the "output"
/// section removed, as 16 hex digits.
std::string config_hash(const nlohmann::json& cfg);

/// Dotted leaf keys with their default values, one "key = value" per entry.
std::vector<std::string> config_key_help();

struct DataSettings {
    std::filesystem::path root;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
    /// Every loaded scan is resampled to this shape.
    Shape3 volume_shape{128, 224, 224};
};

struct SynthSettings {
    int count = 200;
    /// Fraction of class-1 scans.
    double class_balance = 0.5;
    PhantomConfig phantom;
};

struct PretrainedSettings {
    std::filesystem::path checkpoint;
    std::filesystem::path mapping;
    std::optional<InflationMode> inflation;
    bool strict = false;
};

struct EvalSettings {
    int tta_views = 0;
    std::uint64_t tta_seed = 0;
    std::string split = "val";
    /// Evaluation resolution; 0 keeps the one the checkpoint was trained with.
    int resolution = 0;
    std::vector<std::filesystem::path> checkpoints;
};

/// Typed view of a validated config document.
struct RunConfig {
    nlohmann::json doc;
    std::string hash;
    std::uint64_t seed = 0;
    DataSettings data;
    SynthSettings synth;
    ModelConfig model;
    PretrainedSettings pretrained;
    TrainConfig train;
    EvalSettings eval;
    std::filesystem::path output_dir;
    bool resume = true;
};

/// Validates value ranges and converts; every failure is InvalidConfig.
RunConfig resolve_config(const nlohmann::json& doc);

}  // namespace cmc
