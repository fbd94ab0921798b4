#include "semap/embedding_io.hpp"

#include "semap/error.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace semap {

namespace fs = std::filesystem;

namespace detail {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path.string() + ": cannot open file for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(path.string() + ": write failed");
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return v;
}

float get_f32(const std::string& in, std::size_t offset) {
    return std::bit_cast<float>(get_u32(in, offset));
}

} // namespace detail

namespace {

using detail::get_f32;
using detail::get_u32;
using detail::put_f32;
using detail::put_u32;

constexpr std::string_view kEmbMagic = "SEMAPEMB";
constexpr std::string_view kLogitMagic = "SEMAPLGT";
constexpr std::string_view kImageMagic = "SEMAPIMG";
constexpr std::string_view kMappingHeader = "# semap mapping table v1";

[[noreturn]] void fail_at(const fs::path& path, std::size_t offset, const std::string& what) {
    throw FormatError(path.string() + ": byte " + std::to_string(offset) + ": " + what);
}

[[noreturn]] void fail_line(const std::string& origin, std::size_t line, const std::string& what) {
    throw FormatError(origin + ": line " + std::to_string(line) + ": " + what);
}

void check_magic(const fs::path& path, const std::string& bytes, std::string_view magic) {
    if (bytes.size() < magic.size() || bytes.compare(0, magic.size(), magic) != 0) {
        fail_at(path, 0, "magic mismatch, expected " + std::string(magic));
    }
}

void check_size(const fs::path& path, const std::string& bytes, std::uint64_t expected) {
    if (bytes.size() != expected) {
        throw FormatError(path.string() + ": byte " + std::to_string(std::min<std::uint64_t>(bytes.size(), expected)) +
                          ": size mismatch, header declares " + std::to_string(expected) +
                          " bytes but file has " + std::to_string(bytes.size()));
    }
}

std::vector<float> read_reals(const fs::path& path, const std::string& bytes, std::size_t offset,
                              std::uint64_t count) {
    std::vector<float> out(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t at = offset + 4 * i;
        out[i] = get_f32(bytes, at);
        if (!std::isfinite(out[i])) fail_at(path, at, "non-finite value");
    }
    return out;
}

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        // Overlong encodings, surrogates and out-of-range code points.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
            cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
            return false;
        }
        i += len;
    }
    return true;
}

std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

} // namespace

LabelSet load_labels(const fs::path& path, LabelRole role) {
    const std::string text = detail::read_file(path);
    LabelSet out;
    out.role = role;
    std::unordered_map<std::string, std::size_t> seen;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;

        if (!valid_utf8(line)) fail_line(path.string(), line_no, "invalid UTF-8");
        while (!line.empty() && std::string_view(" \t\r\v\f").find(line.back()) != std::string_view::npos) {
            line.pop_back();
        }
        if (line.empty()) fail_line(path.string(), line_no, "empty label");
        auto [it, inserted] = seen.emplace(line, line_no);
        if (!inserted) {
            fail_line(path.string(), line_no,
                      "duplicate label '" + line + "' (first seen on line " + std::to_string(it->second) + ")");
        }
        out.names.push_back(std::move(line));
    }
    if (out.names.empty()) throw FormatError(path.string() + ": no labels");
    return out;
}

void write_labels(const fs::path& path, const LabelSet& labels) {
    std::string text;
    for (const auto& name : labels.names) {
        if (name.empty() || name.find('\n') != std::string::npos) {
            throw InvalidInputError("label '" + name + "' cannot be written to a label file");
        }
        text += name;
        text += '\n';
    }
    detail::write_file(path, text);
}

void check_embeddings_match(const EmbeddingMatrix& emb, const LabelSet& labels) {
    if (emb.count() != labels.size()) {
        throw ShapeError("embedding matrix has " + std::to_string(emb.count()) + " rows but label set has " +
                         std::to_string(labels.size()) + " labels");
    }
}

EmbeddingMatrix load_embeddings(const fs::path& path) {
    const std::string bytes = detail::read_file(path);
    check_magic(path, bytes, kEmbMagic);
    if (bytes.size() < 16) fail_at(path, bytes.size(), "truncated header");
    const std::uint32_t rows = get_u32(bytes, 8);
    const std::uint32_t dim = get_u32(bytes, 12);
    if (rows == 0) fail_at(path, 8, "row count must be positive");
    if (dim == 0) fail_at(path, 12, "dimension must be positive");
    const std::uint64_t count = std::uint64_t{rows} * dim;
    check_size(path, bytes, 16 + 4 * count);
    auto values = read_reals(path, bytes, 16, count);
    for (std::uint32_t r = 0; r < rows; ++r) {
        double norm2 = 0.0;
        for (std::uint32_t c = 0; c < dim; ++c) {
            const double x = values[std::size_t{r} * dim + c];
            norm2 += x * x;
        }
        if (norm2 == 0.0) fail_at(path, 16 + 4 * std::size_t{r} * dim, "zero-norm row " + std::to_string(r));
    }
    return EmbeddingMatrix{Matrix(rows, dim, std::move(values))};
}

void write_embeddings(const fs::path& path, const EmbeddingMatrix& emb) {
    std::string out(kEmbMagic);
    put_u32(out, static_cast<std::uint32_t>(emb.count()));
    put_u32(out, static_cast<std::uint32_t>(emb.dim()));
    for (float x : emb.rows.data()) put_f32(out, x);
    detail::write_file(path, out);
}

LogitBatch load_logits(const fs::path& path) {
    const std::string bytes = detail::read_file(path);
    check_magic(path, bytes, kLogitMagic);
    if (bytes.size() < 17) fail_at(path, bytes.size(), "truncated header");
    LogitBatch b;
    b.count = get_u32(bytes, 8);
    b.width = get_u32(bytes, 12);
    const auto flag = static_cast<unsigned char>(bytes[16]);
    if (flag > 1) fail_at(path, 16, "label flag must be 0 or 1");
    if (b.width == 0) fail_at(path, 12, "width must be positive");
    const std::uint64_t cells = std::uint64_t{b.count} * b.width;
    check_size(path, bytes, 17 + 4 * cells + (flag ? 4 * std::uint64_t{b.count} : 0));
    b.scores = read_reals(path, bytes, 17, cells);
    if (flag) {
        std::vector<std::uint32_t> labels(b.count);
        for (std::uint32_t i = 0; i < b.count; ++i) labels[i] = get_u32(bytes, 17 + 4 * cells + 4 * i);
        b.labels = std::move(labels);
    }
    return b;
}

void write_logits(const fs::path& path, const LogitBatch& batch) {
    if (batch.scores.size() != std::size_t{batch.count} * batch.width) {
        throw ShapeError("logit batch scores length does not match count x width");
    }
    if (batch.labels && batch.labels->size() != batch.count) {
        throw ShapeError("logit batch label count does not match row count");
    }
    std::string out(kLogitMagic);
    put_u32(out, batch.count);
    put_u32(out, batch.width);
    out.push_back(batch.labels ? 1 : 0);
    for (float x : batch.scores) put_f32(out, x);
    if (batch.labels) {
        for (auto l : *batch.labels) put_u32(out, l);
    }
    detail::write_file(path, out);
}

void check_logit_labels(const LogitBatch& batch, std::size_t m) {
    if (!batch.labels) throw InvalidInputError("logit batch has no labels");
    for (std::size_t i = 0; i < batch.labels->size(); ++i) {
        if ((*batch.labels)[i] >= m) {
            throw IndexError("row " + std::to_string(i) + ": label " + std::to_string((*batch.labels)[i]) +
                             " is not below m = " + std::to_string(m));
        }
    }
}

ImageSet load_images(const fs::path& path) {
    const std::string bytes = detail::read_file(path);
    check_magic(path, bytes, kImageMagic);
    if (bytes.size() < 16) fail_at(path, bytes.size(), "truncated header");
    ImageSet s;
    s.count = get_u32(bytes, 8);
    s.side = get_u32(bytes, 12);
    if (s.side == 0) fail_at(path, 12, "side must be positive");
    const std::uint64_t cells = std::uint64_t{s.count} * s.side * s.side;
    check_size(path, bytes, 16 + 4 * cells + 4 * std::uint64_t{s.count});
    s.pixels = read_reals(path, bytes, 16, cells);
    for (std::uint64_t i = 0; i < cells; ++i) {
        if (s.pixels[i] < 0.0f || s.pixels[i] > 1.0f) fail_at(path, 16 + 4 * i, "pixel outside [0, 1]");
    }
    s.labels.resize(s.count);
    for (std::uint32_t i = 0; i < s.count; ++i) s.labels[i] = get_u32(bytes, 16 + 4 * cells + 4 * i);
    return s;
}

void write_images(const fs::path& path, const ImageSet& images) {
    if (images.pixels.size() != std::size_t{images.count} * images.side * images.side ||
        images.labels.size() != images.count) {
        throw ShapeError("image set arrays do not match count and side");
    }
    std::string out(kImageMagic);
    put_u32(out, images.count);
    put_u32(out, images.side);
    for (float x : images.pixels) put_f32(out, x);
    for (auto l : images.labels) put_u32(out, l);
    detail::write_file(path, out);
}

std::string format_mapping(const MappingTable& table) {
    table.validate();
    std::string out(kMappingHeader);
    out += '\n';
    out += "strategy: " + std::string(to_string(table.strategy)) + '\n';
    out += "m: " + std::to_string(table.m) + '\n';
    out += "n: " + std::to_string(table.n) + '\n';
    if (table.hyper.epsilon) out += "epsilon: " + shortest(*table.hyper.epsilon) + '\n';
    if (table.hyper.gamma) out += "gamma: " + shortest(*table.hyper.gamma) + '\n';
    if (table.hyper.cap) out += "cap: " + std::to_string(*table.hyper.cap) + '\n';
    if (table.hyper.k) out += "k: " + std::to_string(*table.hyper.k) + '\n';
    for (std::size_t i = 0; i < table.m; ++i) {
        out += std::to_string(i) + ": [";
        for (std::size_t j = 0; j < table.assignments[i].size(); ++j) {
            if (j) out += ", ";
            out += std::to_string(table.assignments[i][j]);
        }
        out += "]\n";
    }
    return out;
}

MappingTable parse_mapping(const std::string& text, const std::string& origin) {
    std::vector<std::string> lines;
    {
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            lines.push_back(text.substr(pos, end - pos));
            pos = end + 1;
        }
    }
    if (lines.empty() || lines[0] != kMappingHeader) {
        fail_line(origin, 1, "expected header '" + std::string(kMappingHeader) + "'");
    }

    MappingTable t;
    bool have_strategy = false, have_m = false, have_n = false;
    std::set<std::string> keys_seen;
    std::size_t next_class = 0;

    for (std::size_t li = 1; li < lines.size(); ++li) {
        const std::size_t line_no = li + 1;
        const std::string& line = lines[li];
        const auto colon = line.find(": ");
        if (colon == std::string::npos) fail_line(origin, line_no, "expected 'key: value'");
        const std::string key = line.substr(0, colon);
        const std::string value = line.substr(colon + 2);

        if (!key.empty() && std::isdigit(static_cast<unsigned char>(key[0]))) {
            if (!have_strategy || !have_m || !have_n) {
                fail_line(origin, line_no, "class entries must follow strategy, m and n");
            }
            std::size_t cls;
            if (!parse_number(key, cls)) fail_line(origin, line_no, "bad class index '" + key + "'");
            if (cls != next_class) {
                fail_line(origin, line_no, "expected class " + std::to_string(next_class) + ", found " + key);
            }
            if (cls >= t.m) fail_line(origin, line_no, "class " + key + " is not below m");
            if (value.size() < 2 || value.front() != '[' || value.back() != ']') {
                fail_line(origin, line_no, "expected '[i, j, ...]'");
            }
            const std::string body = value.substr(1, value.size() - 2);
            if (body.empty()) fail_line(origin, line_no, "class " + key + " has no indices");
            std::vector<std::uint32_t> list;
            std::set<std::uint32_t> uniq;
            std::size_t pos = 0;
            while (true) {
                const std::size_t comma = body.find(", ", pos);
                const std::string tok = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                std::uint32_t idx;
                if (!parse_number(tok, idx)) fail_line(origin, line_no, "bad index '" + tok + "'");
                if (idx >= t.n) {
                    fail_line(origin, line_no, "index " + tok + " out of range for n = " + std::to_string(t.n));
                }
                if (!uniq.insert(idx).second) fail_line(origin, line_no, "duplicate index " + tok);
                list.push_back(idx);
                if (comma == std::string::npos) break;
                pos = comma + 2;
            }
            t.assignments.push_back(std::move(list));
            ++next_class;
            continue;
        }

        if (!keys_seen.insert(key).second) fail_line(origin, line_no, "duplicate field '" + key + "'");
        if (key == "strategy") {
            try {
                t.strategy = parse_strategy(value);
            } catch (const Error& e) {
                fail_line(origin, line_no, e.what());
            }
            have_strategy = true;
        } else if (key == "m" || key == "n") {
            std::size_t v;
            if (!parse_number(value, v) || v == 0) fail_line(origin, line_no, "bad count '" + value + "'");
            (key == "m" ? t.m : t.n) = v;
            (key == "m" ? have_m : have_n) = true;
        } else if (key == "epsilon" || key == "gamma") {
            double v;
            if (!parse_number(value, v) || !std::isfinite(v)) fail_line(origin, line_no, "bad real '" + value + "'");
            (key == "epsilon" ? t.hyper.epsilon : t.hyper.gamma) = v;
        } else if (key == "cap" || key == "k") {
            std::uint32_t v;
            if (!parse_number(value, v)) fail_line(origin, line_no, "bad count '" + value + "'");
            (key == "cap" ? t.hyper.cap : t.hyper.k) = v;
        } else {
            fail_line(origin, line_no, "unknown field '" + key + "'");
        }
    }
    if (!have_strategy || !have_m || !have_n) throw FormatError(origin + ": missing strategy, m or n");
    if (next_class != t.m) {
        throw FormatError(origin + ": expected " + std::to_string(t.m) + " class entries, found " +
                          std::to_string(next_class));
    }
    try {
        t.validate();
    } catch (const Error& e) {
        throw FormatError(origin + ": " + e.what());
    }
    return t;
}

void write_mapping(const fs::path& path, const MappingTable& table) {
    detail::write_file(path, format_mapping(table));
}

MappingTable load_mapping(const fs::path& path) {
    return parse_mapping(detail::read_file(path), path.string());
}

} // namespace semap
