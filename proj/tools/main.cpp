#include "cli.hpp"

int main(int argc, char** argv) { return meansparse::cli::run(argc, argv); }
