#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rastg/data_io.hpp"
#include "rastg/ndarray.hpp"

namespace rastg::feedback {

// Per-joint, per-frame contribution magnitudes from the final feature map,
// plus the user-facing 0-100 score.
struct HeatmapReport {
    std::string sample_id;
    double raw_score = 0.0;    // questionnaire scale, 0..50
    double score_0_100 = 0.0;  // raw * 2, clamped
    int top_k = 5;
    nd::NdArray contributions; // (T', V), rows on the probability simplex
    std::vector<std::vector<int>> top_joints;   // per frame, top_k indices
    std::vector<std::int64_t> degenerate_frames; // all-zero frames (uniform fill)
};

double rescale_score_0_100(double raw_score);

// feature_map is the reported-order map (N*M, C, T', V); contribution is the
// channel L2 norm, normalized per frame.
HeatmapReport extract_contributions(const nd::NdArray& feature_map_nctv, std::int64_t sample_index,
                                    double raw_score, const std::string& sample_id, int top_k = 5);

// Edge contribution = mean of the endpoint joint contributions at a frame.
double edge_contribution(const HeatmapReport& report, std::int64_t frame, int joint_a, int joint_b);

struct ScoredRecord {
    std::string id;
    std::string date; // YYYY-MM-DD
    data::Category category = data::Category::UNI;
    double score_0_100 = 0.0;
};

struct PeriodPoint {
    std::string window; // e.g. "2025-03"
    double mean = 0.0;
    std::int64_t count = 0;
};

// Windowed means for OVERALL plus each hand-use category; empty windows are
// absent from the series, never zero-filled.
struct PeriodSummary {
    std::string window_kind; // "month" or "day"
    std::map<std::string, std::vector<PeriodPoint>> series;
};

PeriodSummary period_summary(const std::vector<ScoredRecord>& records,
                             const std::string& window_kind = "month");

// Versioned JSON report documents.
void write_heatmap_report(const HeatmapReport& report, const std::filesystem::path& path);
HeatmapReport read_heatmap_report(const std::filesystem::path& path);
void write_period_summary(const PeriodSummary& summary, const std::filesystem::path& path);
PeriodSummary read_period_summary(const std::filesystem::path& path);

// Optional static renders (plain PPM rasters, no external dependencies).
void render_heatmap_image(const HeatmapReport& report, const std::filesystem::path& path);
void render_period_image(const PeriodSummary& summary, const std::filesystem::path& path);

} // namespace rastg::feedback
