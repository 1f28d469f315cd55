#include "abmt/cli.hpp"

int main(int argc, char** argv) { return abmt::cli::run(argc, argv); }
