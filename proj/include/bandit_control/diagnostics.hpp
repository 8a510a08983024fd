#pragma once

#include <functional>
#include <string>

namespace bandit_control {

// Non-fatal conditions (unstable system handed to markov_operator, zero
// observation noise, under-determined least squares) are reported here.
// The default sink writes to stderr.
using WarningSink = std::function<void(const std::string&)>;

void set_warning_sink(WarningSink sink);
void reset_warning_sink();
void warn(const std::string& message);

}  // namespace bandit_control
