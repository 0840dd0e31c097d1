#pragma once

#include <cstdarg>
#include <string>

namespace fedglmm::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

void set_level(Level level);
Level level();
// Parse "debug" / "info" / "warn" / "error" / "off"; throws ParamError otherwise.
Level parse_level(const std::string& name);
// When enabled, each line is emitted as a single JSON object on stderr.
void set_json(bool enabled);

void logf(Level level, const char* fmt, ...) __attribute__((format(printf, 2, 3)));

#define FEDGLMM_DEBUG(...) ::fedglmm::log::logf(::fedglmm::log::Level::kDebug, __VA_ARGS__)
#define FEDGLMM_INFO(...) ::fedglmm::log::logf(::fedglmm::log::Level::kInfo, __VA_ARGS__)
#define FEDGLMM_WARN(...) ::fedglmm::log::logf(::fedglmm::log::Level::kWarn, __VA_ARGS__)
#define FEDGLMM_ERROR(...) ::fedglmm::log::logf(::fedglmm::log::Level::kError, __VA_ARGS__)

}  // namespace fedglmm::log
