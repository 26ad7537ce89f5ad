#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rastg/graph.hpp"
#include "rastg/ndarray.hpp"
#include "rastg/preprocess.hpp"

namespace rastg::data {

enum class Group { ND, Stroke };
enum class Category { UNI, BIA, BIS };

Group parse_group(const std::string& s);
std::string group_name(Group g);
Category parse_category(const std::string& s);
std::string category_name(Category c);

// The 15 action classes and their hand-use categories.
inline constexpr int kClassCount = 15;
Category category_for_label(int label);
const std::string& class_name(int label);

// Ten questionnaire items on a 0-5 scale; total is their sum (0-50).
struct ScoreAnnotation {
    std::array<int, 10> items{};
    int total = 0;
    void validate() const;
    static ScoreAnnotation from_total(int total); // even spread across items
};

struct SampleRecord {
    std::string id;
    std::string subject_id;
    Group group = Group::ND;
    int class_label = 1;
    Category category = Category::UNI;
    std::string sequence_path; // relative to the manifest directory
    ScoreAnnotation score;
    std::string session_date; // YYYY-MM-DD
    void validate() const;
};

struct DatasetManifest {
    int version = 1;
    graph::LayoutVariant layout = graph::LayoutVariant::Basic25;
    std::vector<SampleRecord> records;
    std::filesystem::path base_dir; // directory the manifest was loaded from

    std::int64_t count_group(Group g) const;
    const SampleRecord* find(const std::string& id) const;
    void validate(bool check_files) const;
    std::filesystem::path resolve(const SampleRecord& r) const { return base_dir / r.sequence_path; }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---- sequence container ----------------------------------------------------
//
// Text header (magic line + one-line JSON) followed by a flat little-endian
// block of f64 coordinates, frame-major. Bit-exact round trips.

struct PreprocessingInfo {
    std::string policy;
    std::uint64_t seed = 0;
    std::int64_t target_len = 0;
    bool quaternions = false;
    bool centered = false;
};

struct SequenceData {
    nd::NdArray frames; // (T, V, C); C = 3 raw, 7 with quaternion channels
    graph::LayoutVariant layout = graph::LayoutVariant::Basic25;
    std::string subject_id;
    int class_label = 1;
    std::string units = "m";
    std::optional<PreprocessingInfo> preprocessing;
};

void write_sequence_file(const SequenceData& seq, const std::filesystem::path& path);
SequenceData read_sequence_file(const std::filesystem::path& path);

// Spec surface: raw (C = 3) sequences only, with finiteness and layout checks.
prep::RawSequence load_sequence(const std::filesystem::path& path);
prep::RawSequence load_sequence_checked(const std::filesystem::path& path,
                                        graph::LayoutVariant expected_layout);

// ---- synthetic data ----------------------------------------------------------
//
// Stand-in for the private clinical recordings: smooth upper-limb motions on
// the skeleton tree degraded by three knobs, with the ground-truth score a
// documented deterministic function of the knobs.

struct SynthKnobs {
    double tremor = 0.0;      // [0,1] high-frequency jitter amplitude
    double range_scale = 1.0; // [0.2,1] motion amplitude multiplier
    int interruptions = 0;    // 0..4 mid-motion freezes
};

// quality in [0,1]: 0.45*(1-tremor) + 0.35*range_norm + 0.20*(1-interruptions/4)
double synth_quality(const SynthKnobs& knobs);
int synth_total_score(const SynthKnobs& knobs); // round(50 * quality)

struct SynthSpec {
    std::int64_t count = 10;
    std::uint64_t seed = 1;
    graph::LayoutVariant layout = graph::LayoutVariant::Basic25;
    std::int64_t min_frames = 120;
    std::int64_t max_frames = 400;
    int subjects = 8;
};

// Generates sequences under out_dir/sequences plus a manifest.json; returns
// the loaded manifest.
DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

// One synthetic recording without touching disk (used by tests).
prep::RawSequence synth_sequence(const graph::JointLayout& layout, std::int64_t frames,
                                 int class_label, const SynthKnobs& knobs, std::uint64_t seed);

} // namespace rastg::data
