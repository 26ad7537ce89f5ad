// Checkpoint container: magic/version line, one-line JSON header describing
// the configuration and tensor table, then a raw little-endian f64 blob.
// Round trips are bit-exact.

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rastg/error.hpp"
#include "rastg/model.hpp"

namespace rastg::model {

using nlohmann::json;
using nd::NdArray;
using nd::Shape;

namespace {

constexpr const char* kCkptMagic = "RASTGCKPT 1";

void write_block_le(std::ofstream& out, const double* p, std::size_t n) {
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

void read_block_le(std::ifstream& in, double* p, std::size_t n) {
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

json config_to_json(const ModelConfig& c) {
    json j;
    j["layout"] = graph::variant_name(c.layout);
    j["in_channels"] = c.in_channels;
    j["input_frames"] = c.input_frames;
    j["partitions"] = c.partitions;
    json blocks = json::array();
    for (const auto& b : c.blocks) {
        blocks.push_back({{"in", b.in_channels},
                          {"out", b.out_channels},
                          {"kernel", b.temporal_kernel},
                          {"stride", b.temporal_stride},
                          {"residual", b.residual}});
    }
    j["blocks"] = blocks;
    j["attention"] = {{"heads", c.attention.heads},
                      {"key_dim", c.attention.key_dim},
                      {"value_dim", c.attention.value_dim},
                      {"model_dim", c.attention.model_dim}};
    j["head_hidden"] = c.head_hidden;
    j["head_bias_init"] = c.head_bias_init;
    j["score_scale"] = c.score_scale;
    j["init_seed"] = c.init_seed;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.layout = graph::parse_variant(j.at("layout").get<std::string>());
    c.in_channels = j.at("in_channels").get<int>();
    c.input_frames = j.at("input_frames").get<int>();
    c.partitions = j.at("partitions").get<int>();
    for (const auto& bj : j.at("blocks")) {
        BlockConfig b;
        b.in_channels = bj.at("in").get<int>();
        b.out_channels = bj.at("out").get<int>();
        b.temporal_kernel = bj.at("kernel").get<int>();
        b.temporal_stride = bj.at("stride").get<int>();
        b.residual = bj.at("residual").get<bool>();
        c.blocks.push_back(b);
    }
    const auto& aj = j.at("attention");
    c.attention.heads = aj.at("heads").get<int>();
    c.attention.key_dim = aj.at("key_dim").get<int>();
    c.attention.value_dim = aj.at("value_dim").get<int>();
    c.attention.model_dim = aj.at("model_dim").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.head_bias_init = j.at("head_bias_init").get<double>();
    c.score_scale = j.at("score_scale").get<double>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

} // namespace

void RastGModel::save(const std::filesystem::path& path) {
    json header;
    header["config"] = config_to_json(cfg_);

    std::vector<const NdArray*> tensors;
    json table = json::array();
    for (auto* p : parameters()) {
        if (!p->value().all_finite()) {
            throw NumericError("refusing to save checkpoint: parameter " + p->name() +
                               " contains non-finite values");
        }
        table.push_back({{"name", p->name()}, {"shape", p->value().shape()}});
        tensors.push_back(&p->value());
    }
    json buffers = json::array();
    int bi = 0;
    for (auto& b : blocks_) {
        for (nd::BnState* s : {&b.bn1, &b.bn2}) {
            if (s->running_mean.empty()) {
                // never trained: materialize the initialized stats
                s->running_mean = NdArray(Shape{b.cfg.out_channels});
                s->running_var = NdArray::full(Shape{b.cfg.out_channels}, 1.0);
            }
            buffers.push_back({{"name", "bn_buffer_" + std::to_string(bi)},
                               {"shape", s->running_mean.shape()},
                               {"batches_tracked", s->batches_tracked}});
            tensors.push_back(&s->running_mean);
            tensors.push_back(&s->running_var);
            ++bi;
        }
    }
    header["tensors"] = table;
    header["bn_buffers"] = buffers;

    std::int64_t total = 0;
    for (const auto* t : tensors) total += t->size();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out << kCkptMagic << "\n" << header.dump() << "\nDATA " << total << "\n";
    for (const auto* t : tensors) {
        write_block_le(out, t->data(), static_cast<std::size_t>(t->size()));
    }
    if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

RastGModel RastGModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kCkptMagic) {
        throw DataError("checkpoint " + path.string() + ": bad magic/version line '" + magic + "'");
    }
    std::string header_line;
    std::getline(in, header_line);
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": header: " + e.what());
    }
    std::string data_line;
    std::getline(in, data_line);
    if (data_line.rfind("DATA ", 0) != 0) {
        throw DataError("checkpoint " + path.string() + ": missing DATA marker");
    }
    const std::int64_t total = std::stoll(data_line.substr(5));

    ModelConfig cfg;
    try {
        cfg = config_from_json(header.at("config"));
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": config: " + e.what());
    }
    RastGModel m(cfg);

    auto params = m.parameters();
    const auto& table = header.at("tensors");
    if (table.size() != params.size()) {
        throw DataError("checkpoint " + path.string() + ": expected " +
                        std::to_string(params.size()) + " tensors, found " +
                        std::to_string(table.size()));
    }
    std::int64_t expected = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = table[i];
        if (e.at("name").get<std::string>() != params[i]->name()) {
            throw DataError("checkpoint " + path.string() + ": tensor order mismatch at " +
                            params[i]->name());
        }
        const auto shp = e.at("shape").get<std::vector<std::int64_t>>();
        if (shp != params[i]->value().shape()) {
            throw DataError("checkpoint " + path.string() + ": shape mismatch for " + params[i]->name());
        }
        expected += params[i]->value().size();
    }
    auto bns = m.bn_states();
    const auto& buffers = header.at("bn_buffers");
    if (buffers.size() != bns.size()) {
        throw DataError("checkpoint " + path.string() + ": batch-norm buffer count mismatch");
    }
    for (std::size_t i = 0; i < bns.size(); ++i) {
        const auto shp = buffers[i].at("shape").get<std::vector<std::int64_t>>();
        bns[i]->running_mean = NdArray(Shape(shp.begin(), shp.end()));
        bns[i]->running_var = NdArray(Shape(shp.begin(), shp.end()));
        bns[i]->batches_tracked = buffers[i].at("batches_tracked").get<std::int64_t>();
        expected += 2 * bns[i]->running_mean.size();
    }
    if (expected != total) {
        throw DataError("checkpoint " + path.string() + ": DATA size " + std::to_string(total) +
                        " does not match tensor table " + std::to_string(expected));
    }
    for (auto* p : params) {
        read_block_le(in, p->value_mut().data(), static_cast<std::size_t>(p->value().size()));
    }
    for (auto* s : bns) {
        read_block_le(in, s->running_mean.data(), static_cast<std::size_t>(s->running_mean.size()));
        read_block_le(in, s->running_var.data(), static_cast<std::size_t>(s->running_var.size()));
    }
    if (!in) throw DataError("checkpoint " + path.string() + ": truncated payload");
    return m;
}

} // namespace rastg::model
