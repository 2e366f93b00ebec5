#include "toyfashion/image_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace toyfashion {

namespace {

constexpr char kMagic[8] = {'T', 'F', 'A', 'R', '0', '0', '0', '1'};

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T take(const uint8_t* data, size_t n, size_t& off) {
    require(off + sizeof(T) <= n, ErrorKind::Decode, "array container truncated");
    T v;
    std::memcpy(&v, data + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

std::vector<uint8_t> encode_arrays(const NamedArrays& a) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put<uint32_t>(out, static_cast<uint32_t>(a.tensors.size() + a.ints.size() + a.texts.size()));
    for (const auto& [name, t] : a.tensors) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<uint8_t>(out, 0);  // f64
        put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) put<uint64_t>(out, static_cast<uint64_t>(d));
        const auto* p = reinterpret_cast<const uint8_t*>(t.data());
        out.insert(out.end(), p, p + t.numel() * sizeof(double));
    }
    for (const auto& [name, v] : a.ints) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<uint8_t>(out, 2);  // i64
        put<uint32_t>(out, 1);
        put<uint64_t>(out, static_cast<uint64_t>(v.size()));
        const auto* p = reinterpret_cast<const uint8_t*>(v.data());
        out.insert(out.end(), p, p + v.size() * sizeof(int64_t));
    }
    for (const auto& [name, v] : a.texts) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<uint8_t>(out, 3);  // utf8
        put<uint32_t>(out, 1);
        put<uint64_t>(out, static_cast<uint64_t>(v.size()));
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

NamedArrays decode_arrays(const uint8_t* data, size_t n) {
    size_t off = 0;
    require(n >= 8 && std::memcmp(data, kMagic, 8) == 0, ErrorKind::Decode, "bad array container magic");
    off = 8;
    uint32_t count = take<uint32_t>(data, n, off);
    NamedArrays a;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = take<uint32_t>(data, n, off);
        require(off + name_len <= n, ErrorKind::Decode, "array container truncated");
        std::string name(reinterpret_cast<const char*>(data + off), name_len);
        off += name_len;
        uint8_t dtype = take<uint8_t>(data, n, off);
        uint32_t rank = take<uint32_t>(data, n, off);
        require(rank <= 8, ErrorKind::Decode, "array rank too large");
        std::vector<int64_t> shape(rank);
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int64_t>(take<uint64_t>(data, n, off));
            numel *= shape[r];
        }
        if (dtype == 0) {
            size_t bytes = static_cast<size_t>(numel) * sizeof(double);
            require(off + bytes <= n, ErrorKind::Decode, "array container truncated");
            std::vector<double> vals(static_cast<size_t>(numel));
            std::memcpy(vals.data(), data + off, bytes);
            off += bytes;
            a.tensors.emplace(name, Tensor::from_vector(shape, std::move(vals)));
        } else if (dtype == 2) {
            require(rank == 1, ErrorKind::Decode, "i64 arrays must be rank 1");
            size_t bytes = static_cast<size_t>(numel) * sizeof(int64_t);
            require(off + bytes <= n, ErrorKind::Decode, "array container truncated");
            std::vector<int64_t> vals(static_cast<size_t>(numel));
            std::memcpy(vals.data(), data + off, bytes);
            off += bytes;
            a.ints.emplace(name, std::move(vals));
        } else if (dtype == 3) {
            require(rank == 1, ErrorKind::Decode, "text payloads must be rank 1");
            size_t bytes = static_cast<size_t>(numel);
            require(off + bytes <= n, ErrorKind::Decode, "array container truncated");
            a.texts.emplace(name, std::string(reinterpret_cast<const char*>(data + off), bytes));
            off += bytes;
        } else {
            fail(ErrorKind::Decode, "unknown array dtype");
        }
    }
    return a;
}

NamedArrays decode_arrays(const std::vector<uint8_t>& bytes) {
    return decode_arrays(bytes.data(), bytes.size());
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Config, "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(f.good(), ErrorKind::Config, "write failed: " + path);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    require(f.good(), ErrorKind::Config, "cannot open: " + path);
    auto size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    require(f.good(), ErrorKind::Decode, "read failed: " + path);
    return bytes;
}

namespace {

uint8_t to_byte(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& rgb) {
    require(rgb.rank() == 3 && rgb.dim(0) == 3, ErrorKind::Shape, "write_ppm: expected [3,H,W]");
    int64_t H = rgb.dim(1), W = rgb.dim(2);
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Config, "cannot open for writing: " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) row[static_cast<size_t>(x * 3 + c)] = to_byte(rgb.at3(c, y, x));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

void write_pgm(const std::string& path, const Tensor& gray) {
    require((gray.rank() == 3 && gray.dim(0) == 1) || gray.rank() == 2, ErrorKind::Shape,
            "write_pgm: expected [1,H,W] or [H,W]");
    int64_t H = gray.dim(gray.rank() - 2), W = gray.dim(gray.rank() - 1);
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Config, "cannot open for writing: " + path);
    f << "P5\n" << W << " " << H << "\n255\n";
    const double* d = gray.data();
    std::vector<uint8_t> row(static_cast<size_t>(W));
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) row[static_cast<size_t>(x)] = to_byte(d[y * W + x]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Config, "cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    require(magic == "P6" && w > 0 && h > 0 && maxval == 255, ErrorKind::Decode, "unsupported PPM: " + path);
    f.get();  // single whitespace after header
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(f.good(), ErrorKind::Decode, "truncated PPM: " + path);
    Tensor out({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                out.at3(c, y, x) = raw[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
    return out;
}

}  // namespace toyfashion
