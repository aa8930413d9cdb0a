#include "crepe/util/log.hpp"

#include <iostream>
#include <mutex>

namespace crepe::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current() {
  static Sink sink = [](Level level, std::string_view message) {
    std::cerr << (level == Level::kWarn ? "warning: " : "") << message << '\n';
  };
  return sink;
}

void emit(Level level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (current()) current()(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink old = std::move(current());
  current() = std::move(sink);
  return old;
}

void info(std::string_view message) { emit(Level::kInfo, message); }
void warn(std::string_view message) { emit(Level::kWarn, message); }

}  // namespace crepe::log
