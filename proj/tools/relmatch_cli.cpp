// Command-line entry point; subcommands are filled in as the library grows.
#include <cstdio>

int main() {
  std::puts("relmatch: placeholder");
  return 0;
}
