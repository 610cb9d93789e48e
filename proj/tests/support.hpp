#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "opflab/acopf.hpp"
#include "opflab/casefile.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return OPFLAB_TEST_DATA_DIR; }

inline std::string case_path(const std::string& name) {
  return (data_dir() / "cases" / (name + ".m")).string();
}

inline std::shared_ptr<const opflab::NetworkModel> load(const std::string& name) {
  return std::make_shared<const opflab::NetworkModel>(opflab::build_network(opflab::load_case_file(case_path(name))));
}

// Two buses, one branch, one generator at the slack bus.
inline std::string two_bus_text(double r, double x, double b, double pd = 0.0, double qd = 0.0) {
  std::ostringstream s;
  s.precision(17);
  s << "function mpc = two_bus\n"
    << "mpc.baseMVA = 100;\n"
    << "mpc.bus = [\n"
    << "  1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;\n"
    << "  2 1 " << pd << " " << qd << " 0 0 1 1 0 345 1 1.1 0.9;\n"
    << "];\n"
    << "mpc.gen = [\n"
    << "  1 0 0 300 -300 1 100 1 250 0 0 0 0 0 0 0 0 0 0 0 0;\n"
    << "];\n"
    << "mpc.branch = [\n"
    << "  1 2 " << r << " " << x << " " << b << " 250 250 250 0 0 1 -360 360;\n"
    << "];\n"
    << "mpc.gencost = [\n"
    << "  2 0 0 3 0.01 40 0;\n"
    << "];\n";
  return s.str();
}

inline std::shared_ptr<const opflab::NetworkModel> two_bus(double r, double x, double b, double pd = 0.0,
                                                           double qd = 0.0) {
  return std::make_shared<const opflab::NetworkModel>(
      opflab::build_network(opflab::parse_case(two_bus_text(r, x, b, pd, qd))));
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Strictly interior point; free components drawn from [-0.5, 0.5].
inline opflab::Vec random_interior(const opflab::NlpProblem& p, std::mt19937_64& rng) {
  opflab::Vec x(p.n());
  for (int i = 0; i < p.n(); ++i) {
    const double l = p.lower()[i], u = p.upper()[i];
    if (l == u) x[i] = l;
    else if (opflab::finite_lower(l) && opflab::finite_upper(u)) x[i] = uniform(rng, l + 0.05 * (u - l), u - 0.05 * (u - l));
    else x[i] = uniform(rng, -0.5, 0.5);
  }
  return x;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace testing
