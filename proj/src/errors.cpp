#include "fieldgen/errors.hpp"

#include <cstdio>
#include <mutex>

namespace fieldgen {

namespace {
std::function<void(const std::string&)>& handler_ref() {
    static std::function<void(const std::string&)> handler;
    return handler;
}
std::mutex warn_mutex;
}  // namespace

void warn(const std::string& msg) {
    std::lock_guard<std::mutex> lock(warn_mutex);
    auto& h = handler_ref();
    if (h) {
        h(msg);
    } else {
        std::fprintf(stderr, "[warn] %s\n", msg.c_str());
    }
}

void set_warn_handler(std::function<void(const std::string&)> handler) {
    std::lock_guard<std::mutex> lock(warn_mutex);
    handler_ref() = std::move(handler);
}

}  // namespace fieldgen
