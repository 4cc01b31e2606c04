#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dwtnet {

namespace {

constexpr char kMagic[8] = {'D', 'W', 'T', 'N', 'E', 'T', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

bool get_u64(std::istream& is, std::uint64_t& v) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (is.gcount() != 8) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

bool get_f64(std::istream& is, double& d) {
    std::uint64_t bits;
    if (!get_u64(is, bits)) return false;
    std::memcpy(&d, &bits, 8);
    return true;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 8);
    for (const auto& [name, t] : tensors) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, static_cast<std::uint64_t>(t.ndim()));
        for (int e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
        for (double v : t.data()) put_f64(os, v);
    }
    if (!os) throw IoError("write failure on checkpoint: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);

    NamedTensors out;
    std::uint64_t name_len;
    while (get_u64(is, name_len)) {
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (is.gcount() != static_cast<std::streamsize>(name_len))
            throw IoError("truncated checkpoint (name): " + path);
        std::uint64_t rank;
        if (!get_u64(is, rank)) throw IoError("truncated checkpoint (rank): " + path);
        Shape shape(rank);
        std::uint64_t count = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            std::uint64_t e;
            if (!get_u64(is, e)) throw IoError("truncated checkpoint (extent): " + path);
            shape[i] = static_cast<int>(e);
            count *= e;
        }
        std::vector<double> data(count);
        for (std::uint64_t i = 0; i < count; ++i)
            if (!get_f64(is, data[i])) throw IoError("truncated checkpoint (data): " + path);
        out.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
    }
    return out;
}

const Tensor* find_tensor(const NamedTensors& ts, const std::string& name) {
    for (const auto& [n, t] : ts)
        if (n == name) return &t;
    return nullptr;
}

}  // namespace dwtnet
