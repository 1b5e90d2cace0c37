#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mflab/network.hpp"
#include "mflab/rae.hpp"
#include "mflab/rng.hpp"

namespace mflab {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
    int format_version = kCheckpointFormatVersion;
    std::string stage;  // pretrain | cmt | mfd | mft | decoder
    long iteration = 0;
    std::uint64_t rng_seed = 0;
    std::string rng_stream;
    std::uint64_t rng_counter = 0;
    std::string parent_hash;                 // content hash of the parent file; empty at roots
    std::vector<std::string> stage_history;  // root-first stage tags, this one last
};

/// Enough to rebuild the frozen encoder exactly; the lift hash guards
/// against a silently changed construction.
struct EncoderSpec {
    std::size_t d_x = 0, d_z = 0;
    std::uint64_t seed = 0;
    bool tanh_lift = false;
    std::uint64_t lift_hash = 0;
};

/// Self-describing training snapshot: one JSON document holding the weights
/// as named decimal arrays plus everything needed to resume or audit the
/// run. Save -> load -> save is byte-identical.
struct Checkpoint {
    CheckpointMeta meta;
    EncoderSpec encoder;
    std::string net_kind;  // "velocity" | "flowmap" | "decoder"
    NetConfig net_cfg;     // velocity / flowmap kinds
    MlpConfig mlp_cfg;     // decoder kind
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> ema;  // empty when not tracked
    std::string config_snapshot;                      // verbatim experiment config

    bool has_stage(const std::string& stage) const;
};

EncoderSpec encoder_spec_of(const FrozenEncoder& enc);
FrozenEncoder encoder_from_spec(const EncoderSpec& spec);  // verifies the lift hash

std::vector<std::pair<std::string, Tensor>> named_params(const VelocityNet& net);
std::vector<std::pair<std::string, Tensor>> named_params(const FlowMapNet& net);
std::vector<std::pair<std::string, Tensor>> named_params(const Mlp& net);

/// Rebuild a network from stored arrays (use_ema reads the EMA set instead).
VelocityNet velocity_from_checkpoint(const Checkpoint& ckpt, bool use_ema = false);
FlowMapNet flowmap_from_checkpoint(const Checkpoint& ckpt, bool use_ema = false);
Mlp decoder_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// ParseError on malformed JSON (with line number); ConfigError on a
/// format_version mismatch or an inconsistent document.
Checkpoint load_checkpoint(const std::string& path);

/// Content hash of a file on disk, as 16 hex digits (lineage links).
std::string file_hash_hex(const std::string& path);

}  // namespace mflab
