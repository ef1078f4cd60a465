#include "langfield/log.hpp"

#include <iostream>
#include <mutex>

namespace langfield::log {

namespace {

std::mutex g_mutex;
Sink g_sink;

void emit(Level level, const std::string& msg) {
    std::lock_guard lock(g_mutex);
    if (g_sink) {
        g_sink(level, msg);
        return;
    }
    const char* tag = level == Level::info ? "info" : level == Level::warning ? "warning" : "error";
    std::cerr << "[" << tag << "] " << msg << '\n';
}

} // namespace

void set_sink(Sink sink) {
    std::lock_guard lock(g_mutex);
    g_sink = std::move(sink);
}

void info(const std::string& msg) { emit(Level::info, msg); }
void warn(const std::string& msg) { emit(Level::warning, msg); }
void error(const std::string& msg) { emit(Level::error, msg); }

} // namespace langfield::log
