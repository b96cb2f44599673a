#include "cola/feature_file.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cola {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'L', 'A', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(float(v));
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("feature file truncated while reading ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + std::size_t(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    double f32(const char* what) {
        const auto bits = u32(what);
        return double(std::bit_cast<float>(bits));
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void check_pooled(const std::vector<double>& stored, const Mat& m, std::size_t record_offset,
                  const char* which) {
    if (m.empty()) return;
    for (std::size_t k = 0; k < m.cols; ++k) {
        double sum = 0.0;
        for (std::size_t r = 0; r < m.rows; ++r) sum += m.at(r, k);
        const double mean = sum / double(m.rows);
        if (std::abs(mean - stored[k]) > 1e-6)
            throw FormatError(std::string("stored ") + which + " disagrees with recomputed mean at dim " +
                              std::to_string(k), record_offset);
    }
}

}  // namespace

void write_feature_file(const std::string& path, const std::vector<FeatureBundle>& bundles) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, std::uint32_t(bundles.size()));
    for (const auto& b : bundles) {
        const std::size_t d = b.has_image() ? b.patches.cols : b.tokens.cols;
        if (b.has_image() && b.has_text() && b.patches.cols != b.tokens.cols)
            throw ContractError("bundle '" + b.id + "': patch and token dims disagree");
        put_u32(out, std::uint32_t(b.id.size()));
        out += b.id;
        put_u32(out, std::uint32_t(b.patches.rows));
        put_u32(out, std::uint32_t(b.tokens.rows));
        put_u32(out, std::uint32_t(d));
        for (double v : b.patches.data) put_f32(out, v);
        for (double v : b.tokens.data) put_f32(out, v);
        for (std::size_t k = 0; k < d; ++k)
            put_f32(out, b.has_image() ? b.pooled_image[k] : 0.0);
        for (std::size_t k = 0; k < d; ++k)
            put_f32(out, b.has_text() ? b.pooled_text[k] : 0.0);
    }
    write_text_file(path, out);
}

std::vector<FeatureBundle> read_feature_file(const std::string& path) {
    const std::string buf = read_text_file(path);
    Reader r{buf};

    const std::string magic = r.bytes(8, "magic");
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw FormatError("bad magic, not a COLAFEAT file", 0);
    const auto version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported feature file version " + std::to_string(version), 8);
    const auto count = r.u32("count");

    std::vector<FeatureBundle> bundles;
    bundles.reserve(count);
    for (std::uint32_t rec = 0; rec < count; ++rec) {
        const std::size_t record_offset = r.pos;
        const auto id_len = r.u32("id length");
        FeatureBundle b;
        b.id = r.bytes(id_len, "id");
        const auto p = r.u32("patch count");
        const auto n_tok = r.u32("token count");
        const auto d = r.u32("feature dim");
        if (d == 0) throw FormatError("record " + std::to_string(rec) + " has d=0", record_offset);

        b.patches = Mat(p, d);
        for (auto& v : b.patches.data) v = r.f32("patch values");
        b.tokens = Mat(n_tok, d);
        for (auto& v : b.tokens.data) v = r.f32("token values");
        std::vector<double> pooled_img(d), pooled_txt(d);
        for (auto& v : pooled_img) v = r.f32("pooled image");
        for (auto& v : pooled_txt) v = r.f32("pooled text");
        if (p > 0) b.pooled_image = std::move(pooled_img);
        if (n_tok > 0) b.pooled_text = std::move(pooled_txt);

        check_pooled(b.pooled_image, b.patches, record_offset, "pooled_image");
        check_pooled(b.pooled_text, b.tokens, record_offset, "pooled_text");
        bundles.push_back(std::move(b));
    }
    if (r.pos != buf.size())
        throw FormatError("trailing bytes after last record", r.pos);
    return bundles;
}

}  // namespace cola
