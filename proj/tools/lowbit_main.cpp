#include "lowbit/cli.hpp"

int main(int argc, char** argv) { return lowbit::cli::run_cli(argc, argv); }
