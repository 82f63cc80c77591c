#include "fieldgen/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "fieldgen/errors.hpp"

namespace fieldgen {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

constexpr char kMagic[8] = {'F', 'G', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kKindTensor = 0;
constexpr std::uint8_t kKindString = 1;

template <typename T>
void put(std::string& buf, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
}

class Reader {
  public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    template <typename T>
    T take() {
        if (pos_ + sizeof(T) > buf_.size()) throw IoError("truncated checkpoint " + path_);
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take_bytes(std::size_t n) {
        if (pos_ + n > buf_.size()) throw IoError("truncated checkpoint " + path_);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

  private:
    const std::string& buf_;
    const std::string& path_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed) {
    static const std::array<std::uint32_t, 256> table = make_crc_table();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void Checkpoint::save(const std::string& path) const {
    std::string buf;
    buf.append(kMagic, 8);
    put<std::uint32_t>(buf, kVersion);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size() + meta.size()));

    for (const auto& [name, value] : meta) {
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        buf.append(name);
        put<std::uint8_t>(buf, kKindString);
        put<std::uint64_t>(buf, value.size());
        buf.append(value);
    }
    for (const auto& [name, tensor] : tensors) {
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        buf.append(name);
        put<std::uint8_t>(buf, kKindTensor);
        put<std::uint8_t>(buf, static_cast<std::uint8_t>(tensor.shape.size()));
        for (int d : tensor.shape) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
        buf.append(reinterpret_cast<const char*>(tensor.data.data()),
                   tensor.data.size() * sizeof(double));
    }
    put<std::uint32_t>(buf, crc32(buf.data(), buf.size()));

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp);
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot move " + tmp + " to " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 8 + 4 + 4 + 4 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw IoError("bad checkpoint magic in " + path);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw IoError("checkpoint CRC mismatch in " + path);

    Reader r(buf, path);
    r.take_bytes(8);
    std::uint32_t version = r.take<std::uint32_t>();
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    std::uint32_t count = r.take<std::uint32_t>();

    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = r.take<std::uint16_t>();
        std::string name = r.take_bytes(name_len);
        std::uint8_t kind = r.take<std::uint8_t>();
        if (kind == kKindString) {
            std::uint64_t len = r.take<std::uint64_t>();
            ck.meta[name] = r.take_bytes(static_cast<std::size_t>(len));
        } else if (kind == kKindTensor) {
            std::uint8_t rank = r.take<std::uint8_t>();
            std::vector<int> shape(rank);
            for (auto& d : shape) d = static_cast<int>(r.take<std::uint32_t>());
            Tensor<double> t(shape);
            std::string raw = r.take_bytes(t.data.size() * sizeof(double));
            std::memcpy(t.data.data(), raw.data(), raw.size());
            ck.tensors[name] = std::move(t);
        } else {
            throw IoError("unknown entry kind in checkpoint " + path);
        }
    }
    return ck;
}

}  // namespace fieldgen
