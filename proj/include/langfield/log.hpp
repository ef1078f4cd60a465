#pragma once

#include <functional>
#include <string>

namespace langfield::log {

enum class Level { info, warning, error };

using Sink = std::function<void(Level, const std::string&)>;

// Replaces the process-wide sink. Passing an empty function restores stderr output.
void set_sink(Sink sink);

void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

} // namespace langfield::log
