#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace palm {

inline int run_cli(const std::vector<std::string>& args) {
  (void)args;
  std::fprintf(stderr, "palm: command set not wired up yet\n");
  return 1;
}

}  // namespace palm
