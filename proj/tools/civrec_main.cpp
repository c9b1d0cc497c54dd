#include "civrec/cli.hpp"

int main(int argc, char** argv) { return civrec::cli::run_cli(argc, argv); }
