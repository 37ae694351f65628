#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmc/mixing/mixing.hpp"

namespace cmc {

/// A worker's local batch at one synchronized step.
struct WorkerBatch {
    int rank = 0;
    SeedTuple seed;
    std::vector<LabeledVolume> samples;
};

enum class MessageKind : std::uint16_t { Batch = 0, Result = 1, Failure = 2 };

/// Wire message exchanged between logical workers. Batch messages carry a
/// worker's raw samples; Result messages carry its dispatched raw and mixed
/// samples (raw first); Failure messages carry a diagnosis string.
struct WorkerMessage {
    MessageKind kind = MessageKind::Batch;
    int rank = 0;
    SeedTuple seed;
    std::vector<LabeledVolume> samples;
    std::string error;
};

/// Serialized layout, native byte order:
///   u32 magic 'CMCW' | u16 version | u16 kind | i32 rank | u64 step |
///   u64 global_seed | u64 epoch | u32 count | i32 depth,height,width |
///   u64 payload_bytes | payload | u64 checksum
/// The payload is, per sample, two label doubles followed by the voxels as
/// doubles (or the UTF-8 error text for Failure). The checksum is FNV-1a 64
/// over every preceding byte.
std::vector<std::byte> encode(const WorkerMessage& msg);

/// Throws ProtocolError on a bad magic, truncation or checksum mismatch.
WorkerMessage decode(std::span<const std::byte> bytes);

/// Validates a gathered set of worker batches (ranks 0..W-1 in order, equal
/// local sizes, identical seed tuples) and returns the concatenation.
std::vector<LabeledVolume> concatenate_gathered(std::span<const WorkerBatch> gathered);

/// The deterministic step each worker runs after the all-gather: mix the
/// concatenated batch and keep this rank's positions.
MixedBatch mix_and_select(std::span<const WorkerBatch> gathered, int rank, Real alpha, MixPolicy policy);

enum class Transport { InProcess, Threads, Processes };

/// Gather every worker's local batch, run the hybrid mix over the whole
/// gathered batch and dispatch each worker its own positions. Results are
/// returned in rank order. Throws ProtocolError on unequal local sizes or
/// divergent seed tuples.
std::vector<MixedBatch> gather_dispatch(std::span<const WorkerBatch> workers, Real alpha,
                                        MixPolicy policy = MixPolicy::Hybrid,
                                        Transport transport = Transport::InProcess);

}  // namespace cmc
