#include <bit>
#include <cstring>

#include "cola/fusion.hpp"
#include "json.hpp"

using nlohmann::json;

namespace cola {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'L', 'A', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("checkpoint truncated while reading ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + std::size_t(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos + std::size_t(i)])) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const FusionModel& model, const CheckpointMeta& meta) {
    json header;
    header["fusion"] = json::parse(fusion_config_to_json(model.config()));
    header["meta"] = {{"tool_version", meta.tool_version},
                      {"seed", meta.seed},
                      {"config_hash", meta.config_hash},
                      {"data_manifest_hash", meta.data_manifest_hash}};
    if (!meta.backbone_json.empty()) header["backbone"] = json::parse(meta.backbone_json);
    const std::string header_str = header.dump();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, std::uint32_t(header_str.size()));
    out += header_str;
    put_u32(out, std::uint32_t(model.params().all().size()));
    for (const auto& [name, t] : model.params().all()) {
        put_u32(out, std::uint32_t(name.size()));
        out += name;
        put_u32(out, std::uint32_t(t.rows()));
        put_u32(out, std::uint32_t(t.cols()));
        for (double v : t.values()) put_f64(out, v);
    }
    write_text_file(path, out);
}

LoadedCheckpoint read_checkpoint(const std::string& path) {
    const std::string buf = read_text_file(path);
    Reader r{buf};
    const std::string magic = r.bytes(8, "magic");
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw FormatError("bad magic, not a COLAMODL file", 0);
    const auto version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);

    const auto header_len = r.u32("header length");
    const json header = json::parse(r.bytes(header_len, "header"));

    LoadedCheckpoint out;
    out.config = fusion_config_from_json(header.at("fusion").dump());
    const auto& meta = header.at("meta");
    out.meta.tool_version = meta.at("tool_version").get<std::string>();
    out.meta.seed = meta.at("seed").get<std::uint64_t>();
    out.meta.config_hash = meta.at("config_hash").get<std::string>();
    out.meta.data_manifest_hash = meta.at("data_manifest_hash").get<std::string>();
    if (header.contains("backbone")) out.meta.backbone_json = header.at("backbone").dump();

    const auto count = r.u32("parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.u32("parameter name length");
        const std::string name = r.bytes(name_len, "parameter name");
        const auto rows = r.u32("rows");
        const auto cols = r.u32("cols");
        Mat m(rows, cols);
        for (auto& v : m.data) v = r.f64("parameter values");
        out.tensors.emplace(name, std::move(m));
    }
    if (r.pos != buf.size()) throw FormatError("trailing bytes after last parameter", r.pos);
    return out;
}

void restore_params(FusionModel& model, const LoadedCheckpoint& ckpt) {
    auto& ps = model.params();
    if (ps.all().size() != ckpt.tensors.size())
        throw ContractError("restore_params: checkpoint has " + std::to_string(ckpt.tensors.size()) +
                            " tensors, model has " + std::to_string(ps.all().size()));
    for (auto& [name, t] : ps.all()) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw ContractError("restore_params: checkpoint lacks parameter '" + name + "'");
        const Mat& m = it->second;
        if (m.rows != t.rows() || m.cols != t.cols())
            throw ContractError("restore_params: shape mismatch for '" + name + "'");
        t.mutable_values() = m.data;
    }
}

}  // namespace cola
