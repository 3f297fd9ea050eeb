#include "bench_render.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    using namespace stylesplat;
    CLI::App app("Forward-render throughput on seeded random scenes, as JSON", "stylesplat_bench");
    std::vector<std::size_t> counts{10000, 50000, 100000};
    int side = 512, frames = 5;
    double seconds = 2.0;
    std::size_t workers = 0;
    std::string out, baseline;
    app.add_option("--counts", counts, "Scene sizes in Gaussians")->delimiter(',')->capture_default_str();
    app.add_option("--size", side, "Square image side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--frames", frames, "Minimum timed frames per scene")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--seconds", seconds, "Minimum timed seconds per scene")->capture_default_str();
    app.add_option("--workers", workers, "Render threads (0: hardware concurrency)")->capture_default_str();
    app.add_option("--out", out, "Write the JSON here as well as to stdout");
    app.add_option("--baseline", baseline, "Compare fps against this JSON (informational, +-20%)")->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);

    try {
        std::vector<bench::Result> results;
        for (std::size_t n : counts) {
            results.push_back(bench::measure(n, side, frames, seconds, workers));
            std::cerr << n << " Gaussians: " << results.back().fps << " fps\n";
        }
        auto j = bench::to_json(results, side, workers);
        if (!baseline.empty()) {
            std::ifstream in(baseline);
            j["baseline"] = {{"file", baseline}, {"comparison", bench::compare(j, nlohmann::json::parse(in))}};
        }
        if (!out.empty()) std::ofstream(out) << j.dump(2) << '\n';
        std::cout << j.dump(2) << std::endl;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
