#include "bass/cli.hpp"

int main(int argc, char** argv) { return bass::cli::run(argc, argv); }
