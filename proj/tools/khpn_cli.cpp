// Command-line front end: dataset synthesis, training, evaluation,
// gradient checking, invariant verification and kernel benchmarks.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "suites.hpp"

namespace {

int run_verify(const std::vector<std::string>& names, uint64_t seed) {
  auto results = names.empty() ? khpn::verify::run_all(seed)
                               : khpn::verify::run_named(names, seed);
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-32s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                r.detail.c_str());
    all = all && r.pass;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud sequence action recognition toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 1;

  auto* verify = app.add_subcommand("verify", "Run invariant sweeps");
  std::vector<std::string> suite_list;
  verify->add_option("--suite", suite_list,
                     "Run only the named suites (default: all)");
  verify->add_option("--seed", seed, "Random seed");
  bool list_suites = false;
  verify->add_flag("--list", list_suites, "List suite names and exit");

  CLI11_PARSE(app, argc, argv);

  if (verify->parsed()) {
    if (list_suites) {
      for (const auto& n : khpn::verify::suite_names())
        std::printf("%s\n", n.c_str());
      return 0;
    }
    return run_verify(suite_list, seed);
  }
  return 2;
}
