#include "chembench/cli.hpp"

int main(int argc, char** argv) { return chembench::cli::dispatch(argc, argv); }
