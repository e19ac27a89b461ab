// One line per acceptance criterion on stdout, check details on stderr.
//
// Exit status is 0 when every failing check is a documented known failure
// (see verify::known_failure) and 1 otherwise. `--fast` skips the training
// and throughput criteria for quick local runs.

#include <cstdio>
#include <cstring>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "cdyn/verify/verify.hpp"

using namespace cdyn;

int main(int argc, char** argv) {
  bool fast = false;
  for (int a = 1; a < argc; ++a) fast = fast || std::strcmp(argv[a], "--fast") == 0;

  verify::VerifyOptions o;
  o.training = !fast;
  o.bench = !fast;
  o.desk.config_dir = CDYN_SOURCE_DIR "/configs/desk";
  o.desk.log = [](const std::string& s) { std::cerr << "    " << s << '\n'; };

  std::map<int, verify::Criterion> by_id;
  std::size_t unexplained = 0;
  const auto all = verify::run_all(o, [&](const verify::Criterion& c) {
    std::cerr << (c.id ? "criterion " + std::to_string(c.id) : "suite") << ": " << c.name << '\n';
    for (const auto& k : c.checks) {
      std::cerr << "    " << (k.passed ? "ok   " : "FAIL ") << k.name << ": " << k.detail << '\n';
      if (k.passed) {
        if (verify::known_failure(c.id, k.name))
          std::cerr << "    note: listed as a known failure but passed\n";
      } else if (!verify::known_failure(c.id, k.name)) {
        ++unexplained;
      }
    }
  });
  for (const auto& c : all)
    if (c.id) by_id[c.id] = c;

  for (int id = 1; id <= 12; ++id) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      std::printf("criterion %2d SKIP (not run)\n", id);
      continue;
    }
    const auto& c = it->second;
    std::string known;
    for (const auto& k : c.checks)
      if (!k.passed)
        if (auto why = verify::known_failure(id, k.name)) known += " [known failure: " + k.name + "; " + *why + "]";
    std::printf("criterion %2d %s %s (%.1f s)%s\n", id, c.passed() ? "PASS" : "FAIL", c.name.c_str(), c.seconds,
                known.c_str());
  }
  for (const auto& c : all)
    if (!c.id) std::printf("suite %s %s\n", c.name.c_str(), c.passed() ? "PASS" : "FAIL");
  if (unexplained) std::printf("%zu unexplained failing check(s)\n", unexplained);
  return unexplained ? 1 : 0;
}
