#pragma once
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace heatsim {

// Chunked parallel loop. Each worker gets a contiguous [begin,end) range so
// callers can write results into preassigned slots and stay deterministic
// regardless of the job count.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t, std::size_t)>& body) {
    if (jobs < 1) jobs = 1;
    const std::size_t nj = std::min<std::size_t>(static_cast<std::size_t>(jobs), n ? n : 1);
    if (nj <= 1 || n < 2) {
        body(0, n);
        return;
    }
    std::vector<std::thread> ws;
    ws.reserve(nj);
    const std::size_t chunk = (n + nj - 1) / nj;
    for (std::size_t j = 0; j < nj; ++j) {
        const std::size_t b = j * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        ws.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& w : ws) w.join();
}

} // namespace heatsim
