#pragma once

#include <functional>
#include <string>

namespace calf {

using WarningSink = std::function<void(const std::string&)>;

/// Route library warnings. The default sink writes "warning: ..." to stderr.
/// Returns the previous sink so tests can restore it.
WarningSink set_warning_sink(WarningSink sink);

void warn(const std::string& message);

}  // namespace calf
