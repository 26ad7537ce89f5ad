#include "rastg/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

#include "rastg/error.hpp"
#include "rastg/rng.hpp"

namespace rastg::prep {

SamplingPolicy::Mode parse_policy_mode(const std::string& s) {
    if (s == "deterministic" || s == "deterministic-first") return SamplingPolicy::Mode::DeterministicFirst;
    if (s == "random" || s == "random-in-group") return SamplingPolicy::Mode::RandomInGroup;
    throw ConfigError("unknown sampling policy: " + s);
}

std::string policy_mode_name(SamplingPolicy::Mode m) {
    return m == SamplingPolicy::Mode::DeterministicFirst ? "deterministic-first" : "random-in-group";
}

std::vector<std::pair<std::int64_t, std::int64_t>> frame_groups(std::int64_t t_raw,
                                                                std::int64_t target) {
    if (target < 1) throw ConfigError("target length must be >= 1");
    if (t_raw < target) throw ConfigError("frame_groups requires t_raw >= target");
    const std::int64_t base = t_raw / target;
    const std::int64_t rem = t_raw % target;
    std::vector<std::pair<std::int64_t, std::int64_t>> groups;
    groups.reserve(static_cast<std::size_t>(target));
    std::int64_t begin = 0;
    for (std::int64_t g = 0; g < target; ++g) {
        const std::int64_t len = base + (g < rem ? 1 : 0);
        groups.emplace_back(begin, begin + len);
        begin += len;
    }
    return groups;
}

UniformSequence uniform_frames(const RawSequence& seq, std::int64_t target,
                               const SamplingPolicy& policy) {
    if (target < 1) throw ConfigError("target length must be >= 1");
    const std::int64_t t_raw = seq.frame_count();
    if (t_raw < 1) throw DataError("cannot resample an empty sequence");
    const std::int64_t v = seq.frames.dim(1);
    const std::int64_t c = seq.frames.dim(2);

    std::vector<std::int64_t> chosen(static_cast<std::size_t>(target));
    if (t_raw >= target) {
        auto groups = frame_groups(t_raw, target);
        Rng rng(policy.seed);
        for (std::int64_t g = 0; g < target; ++g) {
            auto [lo, hi] = groups[static_cast<std::size_t>(g)];
            if (policy.mode == SamplingPolicy::Mode::DeterministicFirst) {
                chosen[static_cast<std::size_t>(g)] = lo;
            } else {
                chosen[static_cast<std::size_t>(g)] = lo + rng.uniform_int(hi - lo);
            }
        }
    } else {
        // nearest-index repetition: order preserved, every source frame used
        for (std::int64_t i = 0; i < target; ++i) {
            chosen[static_cast<std::size_t>(i)] = i * t_raw / target;
        }
    }

    UniformSequence out;
    out.policy = policy;
    out.source_indices = chosen;
    out.frames = nd::NdArray(nd::Shape{target, v, c});
    const std::int64_t frame_sz = v * c;
    const double* src = seq.frames.data();
    double* dst = out.frames.data();
    for (std::int64_t i = 0; i < target; ++i) {
        const double* f = src + chosen[static_cast<std::size_t>(i)] * frame_sz;
        std::copy(f, f + frame_sz, dst + i * frame_sz);
    }
    return out;
}

std::vector<int> build_parents(int joint_count,
                               const std::vector<std::pair<int, int>>& edges, int root) {
    if (joint_count < 1) throw ConfigError("joint count must be >= 1");
    if (root < 0 || root >= joint_count) throw ConfigError("root out of range");
    if (static_cast<int>(edges.size()) != joint_count - 1) {
        throw DataError("parent derivation requires a tree: expected " +
                        std::to_string(joint_count - 1) + " edges, got " +
                        std::to_string(edges.size()));
    }
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(joint_count));
    for (auto [a, b] : edges) {
        if (a < 0 || a >= joint_count || b < 0 || b >= joint_count) {
            throw DataError("edge index out of range");
        }
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    std::vector<int> parents(static_cast<std::size_t>(joint_count), -2);
    parents[static_cast<std::size_t>(root)] = kParentSentinel;
    std::deque<int> q{root};
    int reached = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int w : adj[static_cast<std::size_t>(u)]) {
            if (parents[static_cast<std::size_t>(w)] == -2) {
                parents[static_cast<std::size_t>(w)] = u;
                ++reached;
                q.push_back(w);
            }
        }
    }
    if (reached != joint_count) throw DataError("skeleton graph is disconnected or cyclic");
    return parents;
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 vcross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }
Vec3 vscale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

using Mat3 = std::array<double, 9>; // row-major

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 axis_angle(const Vec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    const double x = axis[0], y = axis[1], z = axis[2];
    return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
            t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
            t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

Mat3 mmul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            r[static_cast<std::size_t>(i * 3 + j)] = a[static_cast<std::size_t>(i * 3)] * b[static_cast<std::size_t>(j)] +
                                                     a[static_cast<std::size_t>(i * 3 + 1)] * b[static_cast<std::size_t>(3 + j)] +
                                                     a[static_cast<std::size_t>(i * 3 + 2)] * b[static_cast<std::size_t>(6 + j)];
        }
    }
    return r;
}

Vec3 mapply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

// perpendicular component of `ref` w.r.t. unit vector u
Vec3 perp(const Vec3& ref, const Vec3& u) {
    return vsub(ref, vscale(u, vdot(ref, u)));
}

// Minimal rotation taking unit u0 to unit u1, then a roll about u1 that maps
// the transported up-reference onto the target up-reference. up0 fixes the
// roll ambiguity; when either projection degenerates the roll is left at 0.
Mat3 bone_rotation(const Vec3& u0, const Vec3& u1, const Vec3& up0) {
    Mat3 align = identity3();
    const Vec3 ax = vcross(u0, u1);
    const double s = vnorm(ax);
    const double c = vdot(u0, u1);
    if (s > 1e-12) {
        align = axis_angle(vscale(ax, 1.0 / s), std::atan2(s, c));
    } else if (c < 0.0) {
        // antiparallel: rotate by pi about a deterministic perpendicular axis
        Vec3 p = perp(up0, u0);
        if (vnorm(p) < 1e-9) p = perp(Vec3{1, 0, 0}, u0);
        if (vnorm(p) < 1e-9) p = perp(Vec3{0, 0, 1}, u0);
        align = axis_angle(vscale(p, 1.0 / vnorm(p)), 3.14159265358979323846);
    }
    Vec3 p0 = perp(up0, u0);
    Vec3 p1 = perp(up0, u1);
    const double n0 = vnorm(p0), n1 = vnorm(p1);
    if (n0 > 1e-9 && n1 > 1e-9) {
        const Vec3 t0 = mapply(align, vscale(p0, 1.0 / n0));
        const Vec3 t1 = vscale(p1, 1.0 / n1);
        const double roll = std::atan2(vdot(vcross(t0, t1), u1), vdot(t0, t1));
        align = mmul(axis_angle(u1, roll), align);
    }
    return align;
}

// (x, y, z, w), normalized, w >= 0
std::array<double, 4> quat_from_matrix(const Mat3& m) {
    std::array<double, 4> q{};
    const double trace = m[0] + m[4] + m[8];
    if (trace > 0.0) {
        double s = std::sqrt(trace + 1.0) * 2.0;
        q[3] = 0.25 * s;
        q[0] = (m[7] - m[5]) / s;
        q[1] = (m[2] - m[6]) / s;
        q[2] = (m[3] - m[1]) / s;
    } else if (m[0] > m[4] && m[0] > m[8]) {
        double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
        q[3] = (m[7] - m[5]) / s;
        q[0] = 0.25 * s;
        q[1] = (m[1] + m[3]) / s;
        q[2] = (m[2] + m[6]) / s;
    } else if (m[4] > m[8]) {
        double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
        q[3] = (m[2] - m[6]) / s;
        q[0] = (m[1] + m[3]) / s;
        q[1] = 0.25 * s;
        q[2] = (m[5] + m[7]) / s;
    } else {
        double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
        q[3] = (m[3] - m[1]) / s;
        q[0] = (m[2] + m[6]) / s;
        q[1] = (m[5] + m[7]) / s;
        q[2] = 0.25 * s;
    }
    double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (auto& x : q) x /= n;
    if (q[3] < 0.0) {
        for (auto& x : q) x = -x;
    }
    return q;
}

Vec3 joint_pos(const nd::NdArray& frames, std::int64_t t, std::int64_t j) {
    const double* p = frames.data() + (t * frames.dim(1) + j) * frames.dim(2);
    return {p[0], p[1], p[2]};
}

} // namespace

QuaternionSequence quaternion_sequence(const RawSequence& seq, const std::vector<int>& parents,
                                       const std::optional<nd::NdArray>& prev) {
    const std::int64_t t_len = seq.frame_count();
    const std::int64_t j_count = seq.joint_count();
    if (t_len < 1) throw DataError("quaternion_sequence: empty sequence");
    if (seq.frames.dim(2) != 3) throw ShapeError("quaternion_sequence expects C = 3 coordinates");
    if (static_cast<std::int64_t>(parents.size()) != j_count) {
        throw ShapeError("parent array length " + std::to_string(parents.size()) +
                         " does not match joint count " + std::to_string(j_count));
    }
    nd::NdArray ref = prev.has_value() ? *prev : seq.frames.reshaped(seq.frames.shape());
    if (prev.has_value()) {
        if (prev->rank() != 2 || prev->dim(0) != j_count || prev->dim(1) != 3) {
            throw ShapeError("reference pose must be (J,3)");
        }
    }
    const bool ref_is_first = !prev.has_value();
    const Vec3 up0{0.0, 1.0, 0.0};

    QuaternionSequence out;
    out.parents = parents;
    out.quats = nd::NdArray(nd::Shape{t_len, j_count, 4});
    double* q_out = out.quats.data();

    // reference bones
    std::vector<Vec3> ref_bone(static_cast<std::size_t>(j_count), Vec3{0, 0, 0});
    for (std::int64_t j = 0; j < j_count; ++j) {
        const int p = parents[static_cast<std::size_t>(j)];
        if (p == kParentSentinel) continue;
        Vec3 cj, cp;
        if (ref_is_first) {
            cj = joint_pos(seq.frames, 0, j);
            cp = joint_pos(seq.frames, 0, p);
        } else {
            const double* base = ref.data();
            cj = {base[j * 3], base[j * 3 + 1], base[j * 3 + 2]};
            cp = {base[p * 3], base[p * 3 + 1], base[p * 3 + 2]};
        }
        ref_bone[static_cast<std::size_t>(j)] = vsub(cj, cp);
    }

    for (std::int64_t t = 0; t < t_len; ++t) {
        for (std::int64_t j = 0; j < j_count; ++j) {
            double* q = q_out + (t * j_count + j) * 4;
            const int p = parents[static_cast<std::size_t>(j)];
            std::array<double, 4> quat{0, 0, 0, 1};
            if (p != kParentSentinel) {
                const Vec3 b0 = ref_bone[static_cast<std::size_t>(j)];
                const Vec3 b = vsub(joint_pos(seq.frames, t, j), joint_pos(seq.frames, t, p));
                const double n0 = vnorm(b0), n1 = vnorm(b);
                if (n0 < 1e-9 || n1 < 1e-9) {
                    ++out.degenerate_bone_count;
                } else {
                    quat = quat_from_matrix(
                        bone_rotation(vscale(b0, 1.0 / n0), vscale(b, 1.0 / n1), up0));
                }
            }
            q[0] = quat[0];
            q[1] = quat[1];
            q[2] = quat[2];
            q[3] = quat[3];
        }
    }
    return out;
}

RawSequence center_and_scale(const RawSequence& seq, const graph::JointLayout& layout) {
    const std::int64_t t_len = seq.frame_count();
    const std::int64_t v = seq.joint_count();
    if (v != layout.joint_count()) {
        throw ShapeError("sequence joint count " + std::to_string(v) +
                         " does not match layout " + std::to_string(layout.joint_count()));
    }
    const int root = layout.root;
    const int neck = layout.neck();

    std::vector<double> torso(static_cast<std::size_t>(t_len));
    for (std::int64_t t = 0; t < t_len; ++t) {
        Vec3 d = vsub(joint_pos(seq.frames, t, neck), joint_pos(seq.frames, t, root));
        torso[static_cast<std::size_t>(t)] = vnorm(d);
    }
    std::vector<double> sorted = torso;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    double median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    const double scale = median < 1e-6 ? 1.0 : median;
    const double inv = 1.0 / scale;

    RawSequence out = seq;
    out.frames = nd::NdArray(seq.frames.shape());
    const double* src = seq.frames.data();
    double* dst = out.frames.data();
    for (std::int64_t t = 0; t < t_len; ++t) {
        const Vec3 r = joint_pos(seq.frames, t, root);
        for (std::int64_t j = 0; j < v; ++j) {
            const double* s = src + (t * v + j) * 3;
            double* o = dst + (t * v + j) * 3;
            o[0] = (s[0] - r[0]) * inv;
            o[1] = (s[1] - r[1]) * inv;
            o[2] = (s[2] - r[2]) * inv;
        }
    }
    return out;
}

} // namespace rastg::prep
