#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cointlab/date.hpp"
#include "cointlab/panel.hpp"
#include "cointlab/rng.hpp"
#include "cointlab/simulate.hpp"

namespace testsupport {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cointlab_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    cointlab::Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

inline cointlab::ReturnsPanel normal_returns(Eigen::Index p, Eigen::Index T, std::uint64_t seed, double scale = 0.01) {
    cointlab::ReturnsPanel r;
    r.dates = cointlab::business_days(cointlab::Date{std::chrono::year{2022}, std::chrono::January, std::chrono::day{3}},
                                      static_cast<std::size_t>(T));
    for (Eigen::Index i = 0; i < p; ++i) r.tickers.push_back("A" + std::to_string(i));
    r.returns = scale * normal_matrix(p, T, seed);
    return r;
}

// Simulated market split into two disjoint panels (first half "US", second
// half "EU"), written as wide CSVs in dir.
struct TwoPanels {
    std::filesystem::path us_csv, eu_csv;
    cointlab::Simulation sim;
};

inline TwoPanels write_two_panels(const std::filesystem::path& dir, std::size_t p, std::size_t T, std::uint64_t seed) {
    cointlab::SpecOptions o;
    o.market_std = 8.0;
    TwoPanels out{dir / "us.csv", dir / "eu.csv", cointlab::generate(cointlab::random_spec(p, 4, T, seed, o))};
    std::vector<std::size_t> us, eu;
    for (std::size_t i = 0; i < p; ++i) (i < p / 2 ? us : eu).push_back(i);
    cointlab::write_csv(out.sim.panel.select(us), out.us_csv.string());
    cointlab::write_csv(out.sim.panel.select(eu), out.eu_csv.string());
    return out;
}

inline std::string two_panel_config(const std::string& objective = "sharpe_max", int folds = 3) {
    std::ostringstream c;
    c << "# two spaces plus their union\n"
      << "panel.US = us.csv\n"
      << "panel.EU = eu.csv\n"
      << "joint.JOINT = US + EU\n"
      << "benchmark.US = US\n"
      << "benchmark.European = EU\n"
      << "train_months = 12\n"
      << "folds = " << folds << "\n"
      << "objective = " << objective << "\n"
      << "constraints = joint\n";
    if (objective != "none")
        c << "strategy.SR Optimised I = US + EU + JOINT\n"
          << "strategy.SR Optimised II = JOINT\n";
    c << "seed = 11\n";
    return c.str();
}

}  // namespace testsupport
