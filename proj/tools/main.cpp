#include "cli.hpp"

int main(int argc, char** argv) { return rthare::cli::run({argv + 1, argv + argc}); }
