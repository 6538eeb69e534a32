#include "redsdf/cli.hpp"

int main(int argc, char** argv) { return redsdf::cli::cli_main(argc, argv); }
