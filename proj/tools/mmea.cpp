#include "mmalign/cli.hpp"
#include "mmalign/runtime.hpp"

int main(int argc, char** argv) {
  mmalign::retain_freed_memory();
  return mmalign::cli::run(argc, argv);
}
