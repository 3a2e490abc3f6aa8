#pragma once
#include <cstdint>
#include <string>

namespace heatsim {

struct Fnv64 {
    std::uint64_t h = 0xcbf29ce484222325ull;
    void update(const void* data, std::size_t len) noexcept;
    void update(const std::string& s) noexcept { update(s.data(), s.size()); }
    std::uint64_t value() const noexcept { return h; }
};

std::string digest_hex(std::uint64_t h);
std::uint64_t digest_bytes(const void* data, std::size_t len) noexcept;
std::string digest_file(const std::string& path);     // hex digest; throws if unreadable

} // namespace heatsim
