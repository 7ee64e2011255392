#include "fpb/cli.hpp"

int main(int argc, char** argv) { return fpb::cli::run(argc, argv); }
