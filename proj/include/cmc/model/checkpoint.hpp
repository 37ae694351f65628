#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmc/model/parameters.hpp"

namespace cmc {

/// Dense row-major tensor with a logical shape.
struct Tensor {
    std::vector<int> shape;
    std::vector<Real> data;

    Index numel() const;
    bool operator==(const Tensor&) const = default;
};

enum class InflationMode { Center, Repeat };

/// 2D kernel (Cout, Cin, k, k) -> 3D kernel (Cout, Cin, depth, k, k).
/// Center puts the 2D kernel at temporal index depth/2 and zeros
/// elsewhere; Repeat places kernel/depth at every temporal index, so a
/// temporally constant input gives the 2D response.
Tensor inflate_2d_weights(const Tensor& w2d, int depth, InflationMode mode);

/// Checkpoint file: magic "CMCCKPT1", u64 manifest length, a JSON manifest
/// {"metadata": {...}, "tensors": [{"name","shape","dtype","offset","nbytes"}]},
/// then the raw float64 blob; offsets are relative to the blob start.
struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
    void put(std::string name, Tensor t);
};

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& file);

Tensor to_tensor(const Parameter& p);
Checkpoint snapshot(const ParameterStore& params, nlohmann::json metadata = nlohmann::json::object());

/// Name-prefix rewrites applied to checkpoint tensor names, first match
/// wins; unmatched names pass through. Text form, one directive per line:
///   old.prefix. => new.prefix.
///   inflate center|repeat
/// with '#' starting a comment.
struct NameMapping {
    std::vector<std::pair<std::string, std::string>> rules;
    std::optional<InflationMode> inflate;

    std::string map(const std::string& name) const;
    static NameMapping parse(const std::string& text);
    static NameMapping read(const std::filesystem::path& file);
};

struct LoadOptions {
    /// Fail on any model parameter left unloaded or checkpoint tensor left
    /// unused.
    bool strict = true;
    /// Overrides the mapping's inflate directive.
    std::optional<InflationMode> inflation;
    /// Tensors with this prefix are never treated as model weights.
    std::string ignore_prefix = "optimizer.";
};

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> inflated;
    /// Checkpoint tensors with no matching model parameter.
    std::vector<std::string> unmapped;
    /// Model parameters the checkpoint did not provide; they keep their
    /// current (fresh) values.
    std::vector<std::string> missing;
};

/// Copies mapped checkpoint tensors into the store. Shape mismatches always
/// raise CheckpointError listing every offending name; 4D -> 5D pairs are
/// inflated when an inflation mode is set.
LoadReport load_pretrained(ParameterStore& params, const Checkpoint& ckpt, const NameMapping& mapping,
                           const LoadOptions& options = {});

}  // namespace cmc
