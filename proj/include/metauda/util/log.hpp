// SPDX-License-Identifier: Apache-2.0
//
// Process-wide leveled logging to stderr, with a replaceable sink so tests
// can capture warnings.

#pragma once

#include <functional>
#include <string>

namespace metauda::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

using Sink = std::function<void(Level, const std::string&)>;

/// Messages below the threshold are dropped. Default kInfo.
void set_level(Level level);
Level level();
/// Installs a sink and returns the previous one; an empty sink restores stderr.
Sink set_sink(Sink sink);

void write(Level level, const std::string& message);
inline void debug(const std::string& m) { write(Level::kDebug, m); }
inline void info(const std::string& m) { write(Level::kInfo, m); }
inline void warn(const std::string& m) { write(Level::kWarn, m); }
inline void error(const std::string& m) { write(Level::kError, m); }

const char* level_name(Level level);

}  // namespace metauda::log
