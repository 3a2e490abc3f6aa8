#include "heatsim/digest.hpp"

#include <cstdio>
#include <stdexcept>
#include <vector>

namespace heatsim {

void Fnv64::update(const void* data, std::size_t len) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
}

std::string digest_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::uint64_t digest_bytes(const void* data, std::size_t len) noexcept {
    Fnv64 f;
    f.update(data, len);
    return f.value();
}

std::string digest_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("digest_file: cannot open " + path);
    Fnv64 f;
    std::vector<unsigned char> buf(1 << 16);
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), fp)) > 0) f.update(buf.data(), n);
    std::fclose(fp);
    return digest_hex(f.value());
}

} // namespace heatsim
