#pragma once

#include <sstream>
#include <string>
#include <string_view>

// Thin logging front end. The backend lives in its own translation unit so
// that its formatting library never meets the one bundled with libtorch.
namespace petsgan::log {

void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);
// "debug", "info", "warn", "error" or "off".
void set_level(std::string_view level);

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

}  // namespace petsgan::log
