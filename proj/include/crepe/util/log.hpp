#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace crepe::log {

enum class Level { kInfo, kWarn };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink (stderr by default); returns the previous one.
Sink set_sink(Sink sink);

void info(std::string_view message);
void warn(std::string_view message);

}  // namespace crepe::log
