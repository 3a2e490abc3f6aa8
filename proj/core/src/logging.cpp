#include "heatsim/logging.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <mutex>
#include <sstream>

namespace heatsim {

namespace {

std::mutex g_mtx;
std::ostream* g_sink = nullptr;

std::string timestamp() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const std::time_t secs = system_clock::to_time_t(now);
    const int ms = static_cast<int>(duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[80];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
    return buf;
}

void append_value(std::ostream& os, const LogValue& v) {
    if (const auto* s = std::get_if<std::string>(&v)) {
        os << '"' << json_escape(*s) << '"';
    } else if (const auto* d = std::get_if<double>(&v)) {
        if (std::isfinite(*d)) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", *d);
            os << buf;
        } else {
            os << '"' << (*d > 0 ? "inf" : (*d < 0 ? "-inf" : "nan")) << '"';
        }
    } else if (const auto* i = std::get_if<std::int64_t>(&v)) {
        os << *i;
    } else {
        os << (std::get<bool>(v) ? "true" : "false");
    }
}

} // namespace

std::string json_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

void set_log_sink(std::ostream* os) {
    std::lock_guard<std::mutex> lk(g_mtx);
    g_sink = os;
}

void log_line(std::string_view level, std::string_view stage, std::string_view event,
              const LogFields& fields) {
    std::ostringstream line;
    line << "{\"ts\":\"" << timestamp() << "\",\"level\":\"" << json_escape(level)
         << "\",\"stage\":\"" << json_escape(stage) << "\",\"event\":\"" << json_escape(event)
         << '"';
    for (const auto& [k, v] : fields) {
        line << ",\"" << json_escape(k) << "\":";
        append_value(line, v);
    }
    line << "}\n";
    std::lock_guard<std::mutex> lk(g_mtx);
    (g_sink ? *g_sink : std::cerr) << line.str() << std::flush;
}

void log_info(std::string_view stage, std::string_view event, const LogFields& fields) {
    log_line("info", stage, event, fields);
}
void log_warn(std::string_view stage, std::string_view event, const LogFields& fields) {
    log_line("warn", stage, event, fields);
}
void log_error(std::string_view stage, std::string_view event, const LogFields& fields) {
    log_line("error", stage, event, fields);
}

} // namespace heatsim
