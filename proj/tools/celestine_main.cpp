#include "celestine/cli.hpp"

int main(int argc, char** argv) { return celestine::cli::run(argc, argv); }
