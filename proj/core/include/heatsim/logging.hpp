#pragma once
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace heatsim {

using LogValue = std::variant<std::string, double, std::int64_t, bool>;
using LogFields = std::vector<std::pair<std::string, LogValue>>;

// One JSON object per line: {"ts":...,"level":...,"stage":...,"event":...,...}.
// The default sink is stderr; a run can redirect everything to a file.
void set_log_sink(std::ostream* os);
void log_line(std::string_view level, std::string_view stage, std::string_view event,
              const LogFields& fields = {});
void log_info(std::string_view stage, std::string_view event, const LogFields& fields = {});
void log_warn(std::string_view stage, std::string_view event, const LogFields& fields = {});
void log_error(std::string_view stage, std::string_view event, const LogFields& fields = {});

std::string json_escape(std::string_view s);

} // namespace heatsim
