// Synthetic upper-limb recordings: forward kinematics over the skeleton tree
// driven by smooth single-repetition angle profiles, degraded by the three
// score knobs (tremor, range reduction, interruptions).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "rastg/data_io.hpp"
#include "rastg/error.hpp"
#include "rastg/rng.hpp"

namespace rastg::data {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
Vec3 normalize3(const Vec3& a) {
    double n = norm3(a);
    return n > 1e-12 ? scale3(a, 1.0 / n) : Vec3{1, 0, 0};
}

Vec3 rotate_axis(const Vec3& v, const Vec3& axis, double angle) {
    // Rodrigues
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 k = axis;
    return add3(add3(scale3(v, c), scale3(cross3(k, v), s)), scale3(k, dot3(k, v) * (1.0 - c)));
}

constexpr double kPi = 3.14159265358979323846;

struct ArmProfile {
    bool active = false;
    double elev_amp = 0.0;   // elevation range (rad)
    double yaw_amp = 0.0;    // azimuth range (rad)
    double flex_amp = 0.0;   // elbow flexion range (rad)
    double phase = 0.0;      // profile phase offset
};

struct ClassMotion {
    ArmProfile right, left;
};

ClassMotion motion_for_label(int label) {
    ClassMotion m;
    auto adl = [](double phase) {
        ArmProfile p;
        p.active = true;
        p.elev_amp = 1.0;
        p.yaw_amp = 0.35;
        p.flex_amp = 1.3;
        p.phase = phase;
        return p;
    };
    auto rom_frontal = [] {
        ArmProfile p;
        p.active = true;
        p.elev_amp = 2.0;
        p.yaw_amp = 0.1;
        p.flex_amp = 0.2;
        return p;
    };
    auto rom_side = [] {
        ArmProfile p;
        p.active = true;
        p.elev_amp = 1.7;
        p.yaw_amp = 1.2;
        p.flex_amp = 0.2;
        return p;
    };
    switch (category_for_label(label)) {
        case Category::UNI:
            m.right = adl(0.0);
            break;
        case Category::BIA:
            if (label == 11) {
                m.right = rom_frontal();
            } else if (label == 12) {
                m.left = rom_frontal();
            } else if (label == 13) {
                m.right = rom_side();
            } else if (label == 14) {
                m.left = rom_side();
            } else {
                m.right = adl(0.0);
                m.left = adl(0.3);
                m.left.elev_amp *= 0.5;
                m.left.flex_amp *= 0.5;
            }
            break;
        case Category::BIS:
            if (label == 15) {
                m.right = rom_side();
                m.left = rom_side();
            } else {
                m.right = adl(0.0);
                m.left = adl(0.0);
            }
            break;
    }
    return m;
}

// monotone phase warp that freezes motion inside `holds` windows
std::vector<double> warped_phase(std::int64_t frames, const std::vector<double>& hold_starts,
                                 double hold_len) {
    std::vector<double> speed(static_cast<std::size_t>(frames), 1.0);
    for (std::int64_t i = 0; i < frames; ++i) {
        const double p = frames > 1 ? static_cast<double>(i) / static_cast<double>(frames - 1) : 0.0;
        for (double h : hold_starts) {
            if (p >= h && p < h + hold_len) {
                speed[static_cast<std::size_t>(i)] = 0.0;
                break;
            }
        }
    }
    std::vector<double> phase(static_cast<std::size_t>(frames), 0.0);
    double acc = 0.0;
    for (std::int64_t i = 1; i < frames; ++i) {
        acc += speed[static_cast<std::size_t>(i)];
        phase[static_cast<std::size_t>(i)] = acc;
    }
    if (acc > 0.0) {
        for (auto& p : phase) p /= acc;
    }
    return phase;
}

struct HandOffsets {
    // (along forearm, along palm-up, lateral) per hand landmark, meters
    std::array<std::array<double, 3>, 8> base = {{
        {0.03, 0.00, 0.035},  // thumb_base
        {0.06, 0.01, 0.055},  // thumb_tip
        {0.08, 0.00, 0.020},  // index_base
        {0.12, 0.00, 0.022},  // index_tip
        {0.13, 0.00, 0.000},  // middle_tip
        {0.12, 0.00, -0.022}, // ring_tip
        {0.08, 0.00, -0.030}, // pinky_base
        {0.11, 0.00, -0.042}, // pinky_tip
    }};
    std::array<double, 3> middle_base = {0.08, 0.00, 0.0};
};

} // namespace

prep::RawSequence synth_sequence(const graph::JointLayout& layout, std::int64_t frames,
                                 int class_label, const SynthKnobs& knobs, std::uint64_t seed) {
    if (frames < 1) throw ConfigError("synth_sequence: frames must be >= 1");
    const int v = layout.joint_count();
    Rng rng(seed);

    const double body = rng.uniform(0.9, 1.1); // per-subject proportions
    const double torso = 0.50 * body;
    const double upper_arm = 0.28 * body;
    const double forearm = 0.25 * body;
    const Vec3 hip{0, 0, 0};
    const Vec3 neck{0, torso, 0};
    const Vec3 nose{0, torso + 0.12 * body, 0.06 * body};
    const double shoulder_w = 0.18 * body;

    const ClassMotion motion = motion_for_label(class_label);
    const int interruptions = std::min(4, std::max(0, knobs.interruptions));
    std::vector<double> holds;
    for (int i = 0; i < interruptions; ++i) holds.push_back(rng.uniform(0.15, 0.85));
    const auto phase = warped_phase(frames, holds, 0.06);

    const double tremor_cycles = 9.0 + rng.uniform(0.0, 3.0);
    const double tremor_amp = knobs.tremor * 0.12;
    const std::array<double, 4> tremor_phase = {rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi),
                                                rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi)};

    HandOffsets hands;
    prep::RawSequence seq;
    seq.layout = layout.variant;
    seq.class_label = class_label;
    seq.frames = nd::NdArray(nd::Shape{frames, v, 3});
    double* out = seq.frames.data();

    auto put = [&](std::int64_t t, int j, const Vec3& p) {
        double* d = out + (t * v + j) * 3;
        d[0] = p[0];
        d[1] = p[1];
        d[2] = p[2];
    };

    for (std::int64_t t = 0; t < frames; ++t) {
        const double p_raw = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
        const double pe = phase[static_cast<std::size_t>(t)];
        const double sway = 0.004 * std::sin(2.0 * kPi * 0.8 * p_raw);

        put(t, 8, add3(hip, Vec3{sway, 0, 0}));
        put(t, 1, add3(neck, Vec3{sway, 0, 0}));
        put(t, 0, add3(nose, Vec3{sway, 0, 0}));

        for (int side = 0; side < 2; ++side) {
            const bool is_right = side == 0;
            const double lat = is_right ? 1.0 : -1.0;
            const ArmProfile& arm = is_right ? motion.right : motion.left;
            const int sh = is_right ? 2 : 5, el = is_right ? 3 : 6, wr = is_right ? 4 : 7;

            const Vec3 shoulder = add3(neck, Vec3{lat * shoulder_w + sway, -0.04 * body, 0});
            put(t, sh, shoulder);

            // single-repetition reach profile with tremor jitter in angle space
            const double g = 0.5 * (1.0 - std::cos(2.0 * kPi * std::min(1.0, std::max(0.0, pe - arm.phase * 0.1))));
            const double trem_e = tremor_amp * std::sin(2.0 * kPi * tremor_cycles * p_raw +
                                                        tremor_phase[static_cast<std::size_t>(side * 2)]);
            const double trem_f = tremor_amp * std::sin(2.0 * kPi * (tremor_cycles * 1.18) * p_raw +
                                                        tremor_phase[static_cast<std::size_t>(side * 2 + 1)]);
            const double rest_elev = 0.12, rest_yaw = 0.05, rest_flex = 0.25;
            double elev = rest_elev, yaw = rest_yaw, flex = rest_flex;
            if (arm.active) {
                elev += knobs.range_scale * arm.elev_amp * g + trem_e;
                yaw += knobs.range_scale * arm.yaw_amp * std::sin(kPi * pe);
                flex += knobs.range_scale * arm.flex_amp * g + trem_f;
            } else {
                elev += 0.02 * std::sin(2.0 * kPi * p_raw) + trem_e * 0.3;
            }

            // upper arm: hang down, lift forward by elev, swing out by yaw
            Vec3 dir{0, -1, 0};
            dir = rotate_axis(dir, Vec3{1, 0, 0}, elev);            // forward lift
            dir = rotate_axis(dir, Vec3{0, 1, 0}, lat * yaw);       // outward swing
            const Vec3 elbow = add3(shoulder, scale3(dir, upper_arm));
            put(t, el, elbow);

            // forearm: flex about the axis perpendicular to the upper arm
            Vec3 flex_axis = cross3(dir, Vec3{0, 1, 0});
            if (norm3(flex_axis) < 1e-9) flex_axis = Vec3{1, 0, 0};
            flex_axis = normalize3(flex_axis);
            const Vec3 fdir = rotate_axis(dir, flex_axis, -lat * 0.0 - flex);
            const Vec3 wrist = add3(elbow, scale3(fdir, forearm));
            put(t, wr, wrist);

            // hand frame: e1 along forearm, e2 via up reference, e3 lateral
            const Vec3 e1 = normalize3(fdir);
            Vec3 upref{0, 1, 0};
            Vec3 e2 = add3(upref, scale3(e1, -dot3(upref, e1)));
            if (norm3(e2) < 1e-9) e2 = Vec3{0, 0, 1};
            e2 = normalize3(e2);
            const Vec3 e3 = cross3(e1, e2);

            const int hand_base = is_right ? 9 : 17;
            for (int hj = 0; hj < 8; ++hj) {
                const auto& o = hands.base[static_cast<std::size_t>(hj)];
                Vec3 pos = add3(wrist, add3(scale3(e1, o[0] * body),
                                            add3(scale3(e2, o[1] * body), scale3(e3, lat * o[2] * body))));
                put(t, hand_base + hj, pos);
            }
            if (layout.variant == graph::LayoutVariant::Extended27) {
                const auto& o = hands.middle_base;
                Vec3 pos = add3(wrist, add3(scale3(e1, o[0] * body),
                                            add3(scale3(e2, o[1] * body), scale3(e3, lat * o[2] * body))));
                put(t, is_right ? 25 : 26, pos);
            }
        }
    }
    return seq;
}

DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.count < 1) throw ConfigError("synth_generate: count must be >= 1");
    const auto layout = graph::build_layout(spec.layout);
    std::filesystem::create_directories(out_dir / "sequences");

    DatasetManifest m;
    m.layout = spec.layout;
    m.base_dir = out_dir;

    Rng rng(spec.seed);
    for (std::int64_t i = 0; i < spec.count; ++i) {
        SynthKnobs knobs;
        knobs.tremor = rng.uniform();
        knobs.range_scale = rng.uniform(0.2, 1.0);
        knobs.interruptions = static_cast<int>(rng.uniform_int(5));
        const int label = static_cast<int>(i % kClassCount) + 1;
        const std::int64_t frames =
            spec.min_frames + rng.uniform_int(std::max<std::int64_t>(1, spec.max_frames - spec.min_frames + 1));
        const std::uint64_t seq_seed = Rng::mix(spec.seed, static_cast<std::uint64_t>(i) + 1000);

        prep::RawSequence raw = synth_sequence(layout, frames, label, knobs, seq_seed);

        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%05lld", static_cast<long long>(i));
        const std::string id = idbuf;
        const double q = synth_quality(knobs);

        SampleRecord r;
        r.id = id;
        r.group = q >= 0.75 ? Group::ND : Group::Stroke;
        r.subject_id = (r.group == Group::ND ? "nd-" : "st-") +
                       std::to_string(i % std::max(1, spec.subjects));
        r.class_label = label;
        r.category = category_for_label(label);
        r.sequence_path = "sequences/" + id + ".rseq";
        r.score = ScoreAnnotation::from_total(synth_total_score(knobs));
        {
            const int month = 1 + static_cast<int>((i * 4) / std::max<std::int64_t>(1, spec.count)) % 4;
            const int day = 5 + static_cast<int>((i * 7) % 23);
            char date[16];
            std::snprintf(date, sizeof(date), "2025-%02d-%02d", month, day);
            r.session_date = date;
        }

        SequenceData sd;
        sd.frames = raw.frames;
        sd.layout = raw.layout;
        sd.subject_id = r.subject_id;
        sd.class_label = label;
        write_sequence_file(sd, out_dir / r.sequence_path);
        m.records.push_back(std::move(r));
    }
    save_manifest(m, out_dir / "manifest.json");
    return load_manifest(out_dir / "manifest.json");
}

} // namespace rastg::data
