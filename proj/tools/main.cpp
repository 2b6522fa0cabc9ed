#include "birdhunt/cli.hpp"

int main(int argc, char** argv) { return birdhunt::cli::run(argc, argv); }
