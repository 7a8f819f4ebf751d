#include "tgd/cli.hpp"

int main(int argc, char** argv) { return tgd::cli::main(argc, argv); }
