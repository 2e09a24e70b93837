#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace gelp::log {

inline std::atomic<bool>& quiet() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void warn(std::string_view message) {
  if (!quiet()) std::cerr << "[gelp] warning: " << message << '\n';
}

inline void info(std::string_view message) {
  if (!quiet()) std::cerr << "[gelp] " << message << '\n';
}

}  // namespace gelp::log
