#include "schemadapt/log.hpp"

#include <iostream>
#include <mutex>

namespace schemadapt::log {
namespace {

std::mutex g_mutex;
Level g_min = Level::info;

void stderr_sink(Level level, std::string_view message) {
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::cerr << '[' << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

Sink& sink() {
  static Sink s = stderr_sink;
  return s;
}

}  // namespace

Sink set_sink(Sink s) {
  std::lock_guard lock(g_mutex);
  Sink previous = std::move(sink());
  sink() = s ? std::move(s) : Sink(stderr_sink);
  return previous;
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min = level;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (level < g_min) return;
  sink()(level, message);
}

}  // namespace schemadapt::log
