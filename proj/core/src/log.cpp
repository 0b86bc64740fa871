#include "hypergrad/log.hpp"

#include <cstdlib>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <string_view>

namespace hypergrad {

void init_logging_from_env() {
    auto logger = spdlog::get("hypergrad");
    if (!logger) logger = spdlog::stderr_color_mt("hypergrad");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);

    const char* env = std::getenv("HYPERGRAD_LOG");
    const std::string_view level = env ? env : "info";
    if (level == "error") {
        spdlog::set_level(spdlog::level::err);
    } else if (level == "debug") {
        spdlog::set_level(spdlog::level::debug);
    } else {
        spdlog::set_level(spdlog::level::info);
        if (level != "info") spdlog::warn("HYPERGRAD_LOG='{}' not recognised, using info", level);
    }
}

} // namespace hypergrad
