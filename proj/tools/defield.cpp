#include "defield/cli.hpp"

int main(int argc, char** argv) { return defield::cli::run(argc, argv); }
