// SPDX-License-Identifier: Apache-2.0

#include "metauda/util/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace metauda::log {

namespace {

std::atomic<Level> g_level{Level::kInfo};
std::mutex g_mutex;
Sink g_sink;

}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  std::swap(g_sink, sink);
  return sink;
}

const char* level_name(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
  }
  return "?";
}

void write(Level level, const std::string& message) {
  if (level < g_level.load()) return;
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(level, message);
  } else {
    std::cerr << "[" << level_name(level) << "] " << message << '\n';
  }
}

}  // namespace metauda::log
