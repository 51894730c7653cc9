#include "transtest/cli.hpp"

int main(int argc, char** argv) { return transtest::cli_main(argc, argv); }
