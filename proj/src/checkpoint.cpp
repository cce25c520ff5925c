#include "exprfuse/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <map>

#include "exprfuse/errors.hpp"
#include "exprfuse/io.hpp"

namespace exprfuse {

namespace {

constexpr char kMagic[8] = {'E', 'X', 'F', 'C', 'K', 'P', 'T', '\0'};

[[noreturn]] void fail(const std::string& msg) { throw CheckpointError("checkpoint: " + msg); }

}  // namespace

std::vector<unsigned char> encode_checkpoint(FusionModel& model) {
    ByteWriter w;
    w.bytes(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(kMagic), sizeof(kMagic)));
    w.u32(kCheckpointVersion);
    const std::string cfg = serialize_model_config(model.config());
    w.u64(cfg.size());
    w.text(cfg);
    const ParameterList params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.text(p.name);
        const Shape& s = p.tensor->shape();
        w.u32(static_cast<std::uint32_t>(s.size()));
        for (auto d : s) w.u64(d);
        for (double v : p.tensor->values()) w.f64(v);
    }
    const std::uint32_t sum = crc32(w.data());
    w.u32(sum);
    return w.take();
}

FusionModel decode_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < sizeof(kMagic) + 8) fail("file too short");
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                    [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; })) {
        fail("bad magic");
    }
    const std::span<const unsigned char> all(bytes);
    ByteReader tail(all.subspan(bytes.size() - 4), [](const std::string& m) { fail(m); });
    const std::uint32_t stored = tail.u32();
    const auto body = all.first(bytes.size() - 4);
    if (crc32(body) != stored) fail("checksum mismatch");

    ByteReader r(body, [](const std::string& m) { fail(m); });
    r.bytes(sizeof(kMagic));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t cfg_len = r.u64();
    if (cfg_len > r.remaining()) fail("config block overruns file");
    ModelConfig cfg;
    try {
        cfg = parse_model_config(r.text(cfg_len));
    } catch (const ConfigError& e) {
        fail(std::string("invalid config block: ") + e.what());
    }

    FusionModel model(cfg, 0);
    std::map<std::string, Tensor*> by_name;
    for (const auto& p : model.parameters()) by_name.emplace(p.name, p.tensor);

    const std::uint32_t blocks = r.u32();
    if (blocks != by_name.size()) {
        fail("has " + std::to_string(blocks) + " parameter blocks, config needs " + std::to_string(by_name.size()));
    }
    for (std::uint32_t b = 0; b < blocks; ++b) {
        const std::string name = r.text(r.u32());
        auto it = by_name.find(name);
        if (it == by_name.end()) fail("unexpected parameter block " + name);
        Tensor& target = *it->second;
        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64());
        if (shape != target.shape()) {
            fail("block " + name + " has shape " + to_string(shape) + ", expected " + to_string(target.shape()));
        }
        auto values = target.mutable_values();
        for (double& v : values) v = r.f64();
        by_name.erase(it);
    }
    if (r.remaining() != 0) fail("trailing bytes after parameter blocks");
    return model;
}

void save_checkpoint(const std::filesystem::path& path, FusionModel& model) {
    write_file_atomic(path, encode_checkpoint(model));
}

FusionModel load_checkpoint(const std::filesystem::path& path) {
    std::vector<unsigned char> bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    return decode_checkpoint(bytes);
}

}  // namespace exprfuse
