#include "rastg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rastg/error.hpp"

namespace rastg::graph {

using nlohmann::json;

LayoutVariant parse_variant(const std::string& s) {
    if (s == "basic25") return LayoutVariant::Basic25;
    if (s == "extended27") return LayoutVariant::Extended27;
    throw ConfigError("unknown layout variant: " + s);
}

std::string variant_name(LayoutVariant v) {
    return v == LayoutVariant::Basic25 ? "basic25" : "extended27";
}

int JointLayout::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < joint_names.size(); ++i) {
        if (joint_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int JointLayout::neck() const {
    int idx = index_of("neck");
    if (idx < 0) throw ConfigError("layout has no neck joint");
    return idx;
}

void JointLayout::validate() const {
    const int v = joint_count();
    if (v < 1) throw ConfigError("layout has no joints");
    if (root < 0 || root >= v) throw ConfigError("layout root out of range");
    if (static_cast<int>(edges.size()) != v - 1) {
        throw ConfigError("layout must be a tree: expected " + std::to_string(v - 1) +
                          " edges, got " + std::to_string(edges.size()));
    }
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(v));
    for (auto [p, c] : edges) {
        if (p < 0 || p >= v || c < 0 || c >= v) throw ConfigError("layout edge index out of range");
        adj[static_cast<std::size_t>(p)].push_back(c);
        adj[static_cast<std::size_t>(c)].push_back(p);
    }
    std::vector<bool> seen(static_cast<std::size_t>(v), false);
    std::deque<int> q{root};
    seen[static_cast<std::size_t>(root)] = true;
    int reached = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int w : adj[static_cast<std::size_t>(u)]) {
            if (!seen[static_cast<std::size_t>(w)]) {
                seen[static_cast<std::size_t>(w)] = true;
                ++reached;
                q.push_back(w);
            }
        }
    }
    if (reached != v) throw ConfigError("layout graph is disconnected");
}

namespace {

// Upper-body + both-hands selection compatible with COCO-WholeBody indexing
// conventions; hand landmarks are the per-finger points that carry most of
// the ADL signal. Rooted at mid_hip so the torso segment (mid_hip -> neck)
// defines the scale.
JointLayout basic25() {
    JointLayout l;
    l.variant = LayoutVariant::Basic25;
    l.joint_names = {
        "nose",            // 0
        "neck",            // 1
        "right_shoulder",  // 2
        "right_elbow",     // 3
        "right_wrist",     // 4
        "left_shoulder",   // 5
        "left_elbow",      // 6
        "left_wrist",      // 7
        "mid_hip",         // 8
        "right_thumb_base",// 9
        "right_thumb_tip", // 10
        "right_index_base",// 11
        "right_index_tip", // 12
        "right_middle_tip",// 13
        "right_ring_tip",  // 14
        "right_pinky_base",// 15
        "right_pinky_tip", // 16
        "left_thumb_base", // 17
        "left_thumb_tip",  // 18
        "left_index_base", // 19
        "left_index_tip",  // 20
        "left_middle_tip", // 21
        "left_ring_tip",   // 22
        "left_pinky_base", // 23
        "left_pinky_tip",  // 24
    };
    l.edges = {
        {8, 1},  {1, 0},  {1, 2},  {2, 3},  {3, 4},  {1, 5},  {5, 6},  {6, 7},
        {4, 9},  {9, 10}, {4, 11}, {11, 12}, {4, 13}, {4, 14}, {4, 15}, {15, 16},
        {7, 17}, {17, 18}, {7, 19}, {19, 20}, {7, 21}, {7, 22}, {7, 23}, {23, 24},
    };
    l.root = 8;
    return l;
}

// Basic25 plus a middle-finger base landmark per hand; the middle tips are
// re-parented through them.
JointLayout extended27() {
    JointLayout l = basic25();
    l.variant = LayoutVariant::Extended27;
    l.joint_names.push_back("right_middle_base"); // 25
    l.joint_names.push_back("left_middle_base");  // 26
    auto& e = l.edges;
    e.erase(std::remove(e.begin(), e.end(), std::make_pair(4, 13)), e.end());
    e.erase(std::remove(e.begin(), e.end(), std::make_pair(7, 21)), e.end());
    e.emplace_back(4, 25);
    e.emplace_back(25, 13);
    e.emplace_back(7, 26);
    e.emplace_back(26, 21);
    return l;
}

} // namespace

JointLayout build_layout(LayoutVariant variant) {
    JointLayout l = variant == LayoutVariant::Basic25 ? basic25() : extended27();
    l.validate();
    return l;
}

JointLayout permuted_layout(const JointLayout& layout, const std::vector<int>& perm) {
    const int v = layout.joint_count();
    if (static_cast<int>(perm.size()) != v) throw ConfigError("permutation size mismatch");
    std::vector<int> inv(static_cast<std::size_t>(v), -1);
    for (int i = 0; i < v; ++i) {
        int p = perm[static_cast<std::size_t>(i)];
        if (p < 0 || p >= v || inv[static_cast<std::size_t>(p)] != -1) {
            throw ConfigError("invalid joint permutation");
        }
        inv[static_cast<std::size_t>(p)] = i;
    }
    JointLayout out;
    out.variant = layout.variant;
    out.joint_names.resize(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i) {
        out.joint_names[static_cast<std::size_t>(i)] =
            layout.joint_names[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    for (auto [p, c] : layout.edges) {
        out.edges.emplace_back(inv[static_cast<std::size_t>(p)], inv[static_cast<std::size_t>(c)]);
    }
    out.root = inv[static_cast<std::size_t>(layout.root)];
    out.validate();
    return out;
}

void save_layout(const JointLayout& layout, const std::filesystem::path& path) {
    json j;
    j["format"] = "rastg-layout";
    j["version"] = 1;
    j["variant"] = variant_name(layout.variant);
    j["joints"] = layout.joint_names;
    j["root"] = layout.root;
    json edges = json::array();
    for (auto [p, c] : layout.edges) edges.push_back(json::array({p, c}));
    j["edges"] = edges;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write layout file: " + path.string());
    out << j.dump(2) << "\n";
}

JointLayout load_layout(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open layout file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("layout file " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "rastg-layout") {
        throw DataError("layout file " + path.string() + ": missing format marker");
    }
    JointLayout l;
    try {
        l.variant = parse_variant(j.at("variant").get<std::string>());
        l.joint_names = j.at("joints").get<std::vector<std::string>>();
        l.root = j.at("root").get<int>();
        for (const auto& e : j.at("edges")) {
            l.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
        }
    } catch (const json::exception& e) {
        throw DataError("layout file " + path.string() + ": " + e.what());
    }
    l.validate();
    return l;
}

std::vector<std::vector<int>> hop_distances(const JointLayout& layout) {
    layout.validate();
    const int v = layout.joint_count();
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(v));
    for (auto [p, c] : layout.edges) {
        adj[static_cast<std::size_t>(p)].push_back(c);
        adj[static_cast<std::size_t>(c)].push_back(p);
    }
    std::vector<std::vector<int>> dist(static_cast<std::size_t>(v),
                                       std::vector<int>(static_cast<std::size_t>(v), -1));
    for (int s = 0; s < v; ++s) {
        auto& d = dist[static_cast<std::size_t>(s)];
        d[static_cast<std::size_t>(s)] = 0;
        std::deque<int> q{s};
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            for (int w : adj[static_cast<std::size_t>(u)]) {
                if (d[static_cast<std::size_t>(w)] < 0) {
                    d[static_cast<std::size_t>(w)] = d[static_cast<std::size_t>(u)] + 1;
                    q.push_back(w);
                }
            }
        }
    }
    return dist;
}

PartitionedAdjacency build_partitions(const JointLayout& layout, int k) {
    if (k < 1) throw ConfigError("partition count must be >= 1");
    const int v = layout.joint_count();
    auto dist = hop_distances(layout);
    PartitionedAdjacency out;
    out.partitions = k;
    out.binary = nd::NdArray(nd::Shape{k, v, v});
    double* data = out.binary.data();
    for (int kk = 1; kk < k; ++kk) {
        for (int i = 0; i < v; ++i) {
            for (int j = 0; j < v; ++j) {
                if (dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == kk) {
                    data[(static_cast<std::int64_t>(kk) * v + i) * v + j] = 1.0;
                }
            }
        }
    }
    return out;
}

nd::Var normalize_adjacency(const nd::NdArray& binary, const nd::Var& mask) {
    if (binary.rank() != 3 || binary.dim(1) != binary.dim(2)) {
        throw ShapeError("adjacency must be (K,V,V), got " + nd::shape_str(binary.shape()));
    }
    nd::require_same_shape(binary, mask->value, "normalize_adjacency");
    if (!mask->value.all_finite()) throw NumericError("adjacency mask contains non-finite values");

    const std::int64_t k = binary.dim(0), v = binary.dim(1);
    nd::NdArray b(binary.shape());       // A_k o E_k + I
    nd::NdArray inv_sqrt(nd::Shape{k, v});
    {
        const double* a = binary.data();
        const double* e = mask->value.data();
        double* bp = b.data();
        double* s = inv_sqrt.data();
        for (std::int64_t kk = 0; kk < k; ++kk) {
            for (std::int64_t i = 0; i < v; ++i) {
                double deg = 0.0;
                for (std::int64_t j = 0; j < v; ++j) {
                    const std::int64_t off = (kk * v + i) * v + j;
                    double val = a[off] * e[off] + (i == j ? 1.0 : 0.0);
                    bp[off] = val;
                    deg += val;
                }
                if (!(deg > 1e-12)) {
                    throw NumericError("adjacency degree guard: nonpositive row sum in partition " +
                                       std::to_string(kk) + ", joint " + std::to_string(i));
                }
                s[kk * v + i] = 1.0 / std::sqrt(deg);
            }
        }
    }
    nd::NdArray out(binary.shape());
    {
        const double* bp = b.data();
        const double* s = inv_sqrt.data();
        double* o = out.data();
        for (std::int64_t kk = 0; kk < k; ++kk) {
            for (std::int64_t i = 0; i < v; ++i) {
                for (std::int64_t j = 0; j < v; ++j) {
                    const std::int64_t off = (kk * v + i) * v + j;
                    o[off] = s[kk * v + i] * bp[off] * s[kk * v + j];
                }
            }
        }
    }
    nd::NdArray a_copy = binary; // shared buffer, kept for the backward closure
    return nd::make_op(std::move(out), {mask},
                       [mask, a_copy, b, inv_sqrt, k, v](nd::Node* self) {
                           if (!mask->requires_grad) return;
                           mask->ensure_grad();
                           const double* g = self->grad.data();
                           const double* bp = b.data();
                           const double* s = inv_sqrt.data();
                           const double* a = a_copy.data();
                           double* me = mask->grad.data();
                           std::vector<double> dd(static_cast<std::size_t>(v));
                           for (std::int64_t kk = 0; kk < k; ++kk) {
                               const std::int64_t kb = kk * v * v;
                               // dd[p] = -1/2 d_p^{-3/2} (sum_j G[p][j] B[p][j] s_j
                               //                          + sum_i G[i][p] s_i B[i][p])
                               for (std::int64_t p = 0; p < v; ++p) {
                                   double acc = 0.0;
                                   for (std::int64_t j = 0; j < v; ++j) {
                                       acc += g[kb + p * v + j] * bp[kb + p * v + j] * s[kk * v + j];
                                       acc += g[kb + j * v + p] * s[kk * v + j] * bp[kb + j * v + p];
                                   }
                                   const double sp = s[kk * v + p]; // d^{-1/2}
                                   dd[static_cast<std::size_t>(p)] = -0.5 * sp * sp * sp * acc;
                               }
                               for (std::int64_t i = 0; i < v; ++i) {
                                   for (std::int64_t j = 0; j < v; ++j) {
                                       const std::int64_t off = kb + i * v + j;
                                       const double db = s[kk * v + i] * g[off] * s[kk * v + j] +
                                                         dd[static_cast<std::size_t>(i)];
                                       me[off] += db * a[off];
                                   }
                               }
                           }
                       });
}

nd::NdArray normalize_adjacency_plain(const nd::NdArray& binary) {
    auto mask = nd::constant(nd::NdArray::full(binary.shape(), 1.0));
    return normalize_adjacency(binary, mask)->value;
}

} // namespace rastg::graph
