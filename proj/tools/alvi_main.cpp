#include "alvi/cli.hpp"

int main(int argc, char** argv) { return alvi::cli::run(argc, argv); }
