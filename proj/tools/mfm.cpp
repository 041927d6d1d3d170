#include "mfm/cli.hpp"

int main(int argc, char** argv) {
  mfm::tune_allocator();
  return mfm::cli::run(argc, argv);
}
