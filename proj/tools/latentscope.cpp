#include "latentscope/cli.hpp"

int main(int argc, char** argv) { return latentscope::cli::dispatch(argc, argv); }
