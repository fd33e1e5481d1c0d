#include "emns/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Electromagnetic navigation control stack: simulation, allocation benchmark, workspace maps"};
    app.require_subcommand(1);

    emns::RunConfig rc;
    long long seed = -1;
    for (const char* name : {"simulate", "alloc-bench", "workspace"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", rc.config_path, "JSON configuration")->required();
        sub->add_option("--out", rc.out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "override the config seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--workers", rc.workers, "worker threads")->check(CLI::PositiveNumber);
        sub->callback([&rc, name] { rc.command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : emns::kExitConfig;
    }
    if (seed >= 0) rc.seed = static_cast<std::uint64_t>(seed);
    return emns::run_command(rc, std::cerr);
}
