#include "annosim/cli.hpp"

int main(int argc, char** argv) { return annosim::run_cli(argc, argv); }
