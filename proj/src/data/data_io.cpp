#include "rastg/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "rastg/error.hpp"

namespace rastg::data {

using nlohmann::json;

Group parse_group(const std::string& s) {
    if (s == "ND") return Group::ND;
    if (s == "Stroke") return Group::Stroke;
    throw DataError("unknown group: " + s);
}

std::string group_name(Group g) { return g == Group::ND ? "ND" : "Stroke"; }

Category parse_category(const std::string& s) {
    if (s == "UNI") return Category::UNI;
    if (s == "BIA") return Category::BIA;
    if (s == "BIS") return Category::BIS;
    throw DataError("unknown category: " + s);
}

std::string category_name(Category c) {
    switch (c) {
        case Category::UNI: return "UNI";
        case Category::BIA: return "BIA";
        default: return "BIS";
    }
}

namespace {

struct ClassInfo {
    const char* name;
    Category category;
};

// 10 ADL tasks (1-10) and 5 ROM tasks (11-15)
const std::array<ClassInfo, kClassCount> kClasses = {{
    {"LiftCupHandle", Category::UNI},
    {"HairBrush", Category::UNI},
    {"BrushTeeth", Category::UNI},
    {"Remotecon", Category::UNI},
    {"MovingCan", Category::UNI},
    {"Writing", Category::BIA},
    {"FoldingPaper", Category::BIA},
    {"FoldupTowel", Category::BIA},
    {"WashFace", Category::BIS},
    {"Smartphone", Category::BIS},
    {"RightShoulderFrontal", Category::BIA},
    {"LeftShoulderFrontal", Category::BIA},
    {"RightShoulderSide", Category::BIA},
    {"LeftShoulderSide", Category::BIA},
    {"LateralRotation", Category::BIS},
}};

void check_label(int label) {
    if (label < 1 || label > kClassCount) {
        throw DataError("class label " + std::to_string(label) + " outside 1.." +
                        std::to_string(kClassCount));
    }
}

} // namespace

Category category_for_label(int label) {
    check_label(label);
    return kClasses[static_cast<std::size_t>(label - 1)].category;
}

const std::string& class_name(int label) {
    check_label(label);
    static std::array<std::string, kClassCount> names = [] {
        std::array<std::string, kClassCount> n;
        for (int i = 0; i < kClassCount; ++i) n[static_cast<std::size_t>(i)] = kClasses[static_cast<std::size_t>(i)].name;
        return n;
    }();
    return names[static_cast<std::size_t>(label - 1)];
}

void ScoreAnnotation::validate() const {
    int sum = 0;
    for (int it : items) {
        if (it < 0 || it > 5) throw DataError("score item " + std::to_string(it) + " outside 0..5");
        sum += it;
    }
    if (sum != total) {
        throw DataError("score total " + std::to_string(total) + " does not equal item sum " +
                        std::to_string(sum));
    }
}

ScoreAnnotation ScoreAnnotation::from_total(int total) {
    if (total < 0 || total > 50) throw DataError("total score outside 0..50");
    ScoreAnnotation s;
    s.total = total;
    const int base = total / 10;
    const int rem = total % 10;
    for (int i = 0; i < 10; ++i) s.items[static_cast<std::size_t>(i)] = base + (i < rem ? 1 : 0);
    return s;
}

namespace {

void check_date(const std::string& d, const std::string& id) {
    const bool ok = d.size() == 10 && d[4] == '-' && d[7] == '-' &&
                    std::all_of(d.begin(), d.end(), [](char c) { return c == '-' || (c >= '0' && c <= '9'); });
    if (!ok) throw DataError("record " + id + ": session_date must be YYYY-MM-DD, got '" + d + "'");
}

} // namespace

void SampleRecord::validate() const {
    if (id.empty()) throw DataError("record with empty id");
    check_label(class_label);
    if (category != category_for_label(class_label)) {
        throw DataError("record " + id + ": category " + category_name(category) +
                        " does not match class " + std::to_string(class_label) + " (" +
                        category_name(category_for_label(class_label)) + ")");
    }
    if (sequence_path.empty()) throw DataError("record " + id + ": missing sequence path");
    score.validate();
    check_date(session_date, id);
}

std::int64_t DatasetManifest::count_group(Group g) const {
    return static_cast<std::int64_t>(
        std::count_if(records.begin(), records.end(), [g](const SampleRecord& r) { return r.group == g; }));
}

const SampleRecord* DatasetManifest::find(const std::string& id) const {
    for (const auto& r : records) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

void DatasetManifest::validate(bool check_files) const {
    std::set<std::string> ids;
    for (const auto& r : records) {
        r.validate();
        if (!ids.insert(r.id).second) throw DataError("duplicate sample id: " + r.id);
        if (check_files && !std::filesystem::exists(resolve(r))) {
            throw DataError("record " + r.id + ": missing sequence file " + resolve(r).string());
        }
    }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        if (j.value("format", "") != "rastg-manifest") {
            throw DataError("manifest " + path.string() + ": missing format marker");
        }
        m.version = j.at("version").get<int>();
        if (m.version != 1) throw DataError("unsupported manifest version " + std::to_string(m.version));
        m.layout = graph::parse_variant(j.at("layout").get<std::string>());
        for (const auto& rj : j.at("samples")) {
            SampleRecord r;
            r.id = rj.at("id").get<std::string>();
            r.subject_id = rj.at("subject").get<std::string>();
            r.group = parse_group(rj.at("group").get<std::string>());
            r.class_label = rj.at("label").get<int>();
            r.category = parse_category(rj.at("category").get<std::string>());
            r.sequence_path = rj.at("sequence").get<std::string>();
            auto items = rj.at("items").get<std::vector<int>>();
            if (items.size() != 10) {
                throw DataError("record " + r.id + ": expected 10 score items, got " +
                                std::to_string(items.size()));
            }
            std::copy(items.begin(), items.end(), r.score.items.begin());
            r.score.total = rj.at("total").get<int>();
            r.session_date = rj.at("date").get<std::string>();
            m.records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    m.validate(/*check_files=*/true);
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    manifest.validate(/*check_files=*/false);
    json j;
    j["format"] = "rastg-manifest";
    j["version"] = manifest.version;
    j["layout"] = graph::variant_name(manifest.layout);
    j["counts"] = {{"ND", manifest.count_group(Group::ND)},
                   {"Stroke", manifest.count_group(Group::Stroke)},
                   {"total", manifest.records.size()}};
    json samples = json::array();
    for (const auto& r : manifest.records) {
        json rj;
        rj["id"] = r.id;
        rj["subject"] = r.subject_id;
        rj["group"] = group_name(r.group);
        rj["label"] = r.class_label;
        rj["category"] = category_name(r.category);
        rj["sequence"] = r.sequence_path;
        rj["items"] = std::vector<int>(r.score.items.begin(), r.score.items.end());
        rj["total"] = r.score.total;
        rj["date"] = r.session_date;
        samples.push_back(std::move(rj));
    }
    j["samples"] = std::move(samples);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
}

// ---- sequence container -------------------------------------------------------

namespace {

constexpr const char* kSeqMagic = "RASTGSEQ 1";

void write_doubles_le(std::ofstream& out, const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &p[i], 8);
            char buf[8];
            for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
            out.write(buf, 8);
        }
    }
}

void read_doubles_le(std::ifstream& in, double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            char buf[8];
            in.read(buf, 8);
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
            std::memcpy(&p[i], &bits, 8);
        }
    }
}

} // namespace

void write_sequence_file(const SequenceData& seq, const std::filesystem::path& path) {
    if (seq.frames.rank() != 3) throw ShapeError("sequence frames must be (T,V,C)");
    json h;
    h["layout"] = graph::variant_name(seq.layout);
    h["frames"] = seq.frames.dim(0);
    h["joints"] = seq.frames.dim(1);
    h["channels"] = seq.frames.dim(2);
    h["subject"] = seq.subject_id;
    h["label"] = seq.class_label;
    h["units"] = seq.units;
    if (seq.preprocessing) {
        h["preprocessing"] = {{"policy", seq.preprocessing->policy},
                              {"seed", seq.preprocessing->seed},
                              {"target_len", seq.preprocessing->target_len},
                              {"quaternions", seq.preprocessing->quaternions},
                              {"centered", seq.preprocessing->centered}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write sequence file: " + path.string());
    out << kSeqMagic << "\n" << h.dump() << "\nDATA " << seq.frames.size() << "\n";
    write_doubles_le(out, seq.frames.data(), static_cast<std::size_t>(seq.frames.size()));
    if (!out) throw DataError("failed writing sequence file: " + path.string());
}

SequenceData read_sequence_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open sequence file: " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kSeqMagic) {
        throw DataError("sequence file " + path.string() + ": bad magic/version line '" + magic + "'");
    }
    std::string header_line;
    std::getline(in, header_line);
    json h;
    try {
        h = json::parse(header_line);
    } catch (const json::exception& e) {
        throw DataError("sequence file " + path.string() + ": header: " + e.what());
    }
    std::string data_line;
    std::getline(in, data_line);
    if (data_line.rfind("DATA ", 0) != 0) {
        throw DataError("sequence file " + path.string() + ": missing DATA marker");
    }
    const std::int64_t count = std::stoll(data_line.substr(5));

    SequenceData seq;
    std::int64_t t, v, c;
    try {
        seq.layout = graph::parse_variant(h.at("layout").get<std::string>());
        t = h.at("frames").get<std::int64_t>();
        v = h.at("joints").get<std::int64_t>();
        c = h.at("channels").get<std::int64_t>();
        seq.subject_id = h.at("subject").get<std::string>();
        seq.class_label = h.at("label").get<int>();
        seq.units = h.value("units", "m");
        if (h.contains("preprocessing")) {
            const auto& p = h["preprocessing"];
            PreprocessingInfo info;
            info.policy = p.at("policy").get<std::string>();
            info.seed = p.at("seed").get<std::uint64_t>();
            info.target_len = p.at("target_len").get<std::int64_t>();
            info.quaternions = p.at("quaternions").get<bool>();
            info.centered = p.at("centered").get<bool>();
            seq.preprocessing = info;
        }
    } catch (const json::exception& e) {
        throw DataError("sequence file " + path.string() + ": header: " + e.what());
    }
    if (t < 1 || v < 1 || (c != 3 && c != 7)) {
        throw DataError("sequence file " + path.string() + ": bad dimensions");
    }
    if (count != t * v * c) {
        throw DataError("sequence file " + path.string() + ": DATA count " + std::to_string(count) +
                        " does not match header dims " + std::to_string(t * v * c));
    }
    seq.frames = nd::NdArray(nd::Shape{t, v, c});
    read_doubles_le(in, seq.frames.data(), static_cast<std::size_t>(count));
    if (!in) {
        throw DataError("sequence file " + path.string() + ": truncated payload");
    }
    return seq;
}

prep::RawSequence load_sequence(const std::filesystem::path& path) {
    SequenceData s = read_sequence_file(path);
    if (s.frames.dim(2) != 3) {
        throw DataError("sequence file " + path.string() + ": expected raw C=3 coordinates, got C=" +
                        std::to_string(s.frames.dim(2)));
    }
    const double* p = s.frames.data();
    const std::int64_t v = s.frames.dim(1);
    for (std::int64_t i = 0; i < s.frames.size(); ++i) {
        if (!std::isfinite(p[i])) {
            throw DataError("sequence file " + path.string() + ": non-finite coordinate at frame " +
                            std::to_string(i / (v * 3)) + ", joint " + std::to_string((i / 3) % v));
        }
    }
    prep::RawSequence raw;
    raw.frames = s.frames;
    raw.layout = s.layout;
    raw.subject_id = s.subject_id;
    raw.class_label = s.class_label;
    return raw;
}

prep::RawSequence load_sequence_checked(const std::filesystem::path& path,
                                        graph::LayoutVariant expected_layout) {
    prep::RawSequence raw = load_sequence(path);
    const auto expected = graph::build_layout(expected_layout);
    if (raw.layout != expected_layout || raw.joint_count() != expected.joint_count()) {
        throw DataError("sequence file " + path.string() + ": layout mismatch, expected " +
                        graph::variant_name(expected_layout) + " with V=" +
                        std::to_string(expected.joint_count()) + ", got " +
                        graph::variant_name(raw.layout) + " with V=" +
                        std::to_string(raw.joint_count()));
    }
    return raw;
}

// ---- synthetic generator -------------------------------------------------------

double synth_quality(const SynthKnobs& k) {
    const double range_norm = (k.range_scale - 0.2) / 0.8;
    double q = 0.45 * (1.0 - k.tremor) + 0.35 * range_norm +
               0.20 * (1.0 - static_cast<double>(k.interruptions) / 4.0);
    return std::min(1.0, std::max(0.0, q));
}

int synth_total_score(const SynthKnobs& k) {
    return static_cast<int>(std::lround(50.0 * synth_quality(k)));
}

} // namespace rastg::data
