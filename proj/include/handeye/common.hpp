// Shared error types, checksums and little-endian binary I/O helpers.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace handeye {

// Error families map onto CLI exit codes: usage -> 1, data -> 2, divergence -> 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for file checksums and batch/frame identity hashes.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::vector<uint8_t>& bytes) {
    return fnv1a(bytes.data(), bytes.size());
}

// Serialization buffer with explicit little-endian scalar layout.
// x86 is little-endian; byteswap would go here if that ever changes.
class ByteWriter {
  public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const size_t off = buf_.size();
        buf_.resize(off + sizeof(T));
        std::memcpy(buf_.data() + off, &v, sizeof(T));
    }

    void put_bytes(const void* p, size_t n) {
        const size_t off = buf_.size();
        buf_.resize(off + n);
        std::memcpy(buf_.data() + off, p, n);
    }

    const std::vector<uint8_t>& bytes() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + path);
        f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!f) throw DataError("write failed: " + path);
    }

  private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
  public:
    explicit ByteReader(std::vector<uint8_t> bytes) : buf_(std::move(bytes)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open: " + path);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(bytes));
    }

    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        T v;
        if (pos_ + sizeof(T) > buf_.size()) throw DataError("truncated input");
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void get_bytes(void* p, size_t n) {
        if (pos_ + n > buf_.size()) throw DataError("truncated input");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    size_t remaining() const { return buf_.size() - pos_; }

  private:
    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
};

inline uint64_t file_checksum(const std::string& path) {
    auto r = ByteReader::from_file(path);
    std::vector<uint8_t> bytes(r.remaining());
    r.get_bytes(bytes.data(), bytes.size());
    return fnv1a(bytes);
}

}  // namespace handeye
