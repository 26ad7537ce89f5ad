#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rastg/graph.hpp"
#include "rastg/ndarray.hpp"

namespace rastg::prep {

// A recording as captured: variable length, camera-frame meters.
struct RawSequence {
    nd::NdArray frames; // (T, V, C) with C = 3 (x, y, z)
    graph::LayoutVariant layout = graph::LayoutVariant::Basic25;
    std::string subject_id;
    int class_label = 0; // 1..15
    std::optional<std::vector<double>> timestamps;

    std::int64_t frame_count() const { return frames.empty() ? 0 : frames.dim(0); }
    std::int64_t joint_count() const { return frames.empty() ? 0 : frames.dim(1); }
};

struct SamplingPolicy {
    enum class Mode { DeterministicFirst, RandomInGroup };
    Mode mode = Mode::DeterministicFirst;
    std::uint64_t seed = 0;
};

SamplingPolicy::Mode parse_policy_mode(const std::string& s);
std::string policy_mode_name(SamplingPolicy::Mode m);

// Fixed-length sequence with provenance of the chosen source frames.
struct UniformSequence {
    nd::NdArray frames; // (target, V, C)
    std::vector<std::int64_t> source_indices;
    SamplingPolicy policy;
};

// Even-group frame sampling (downsampling path) or nearest-index repetition
// (upsampling path). Group sizes differ by at most one, with the remainder
// going to the earliest groups.
UniformSequence uniform_frames(const RawSequence& seq, std::int64_t target,
                               const SamplingPolicy& policy);

// Group boundaries used by uniform_frames, exposed for tests/tools:
// returns `target` [begin, end) pairs covering [0, t_raw) when t_raw >= target.
std::vector<std::pair<std::int64_t, std::int64_t>> frame_groups(std::int64_t t_raw,
                                                                std::int64_t target);

inline constexpr int kParentSentinel = -1;

// P[j] = parent joint of j; P[root] = kParentSentinel.
std::vector<int> build_parents(int joint_count,
                               const std::vector<std::pair<int, int>>& edges, int root);

// Joint-wise unit quaternions (x, y, z, w) describing each bone's rotation
// away from a reference pose (default: the first frame). Degenerate bones
// yield the identity quaternion and are counted, not failed.
struct QuaternionSequence {
    nd::NdArray quats; // (T, J, 4)
    std::vector<int> parents;
    int degenerate_bone_count = 0;
};

QuaternionSequence quaternion_sequence(const RawSequence& seq, const std::vector<int>& parents,
                                       const std::optional<nd::NdArray>& prev = std::nullopt);

// Root-center every frame and divide by the median torso (root-to-neck)
// length; a degenerate torso falls back to scale 1.
RawSequence center_and_scale(const RawSequence& seq, const graph::JointLayout& layout);

} // namespace rastg::prep
