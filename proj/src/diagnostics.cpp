#include "bandit_control/diagnostics.hpp"

#include <iostream>
#include <mutex>

namespace bandit_control {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink() {
  static WarningSink s = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}

}  // namespace

void set_warning_sink(WarningSink s) {
  std::lock_guard lock(sink_mutex());
  sink() = std::move(s);
}

void reset_warning_sink() {
  set_warning_sink([](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; });
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(message);
}

}  // namespace bandit_control
