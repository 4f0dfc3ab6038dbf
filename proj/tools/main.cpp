#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"

int main(int argc, char** argv) {
    // Logs go to stderr so stdout carries only command output.
    spdlog::set_default_logger(spdlog::stderr_color_mt("mrfibp"));
    return mrfibp::cli::run_cli(argc, argv, std::cout, std::cerr);
}
