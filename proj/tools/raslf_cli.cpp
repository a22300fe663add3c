#include "raslf/cli.hpp"

int main(int argc, char** argv) { return raslf::cli::run(argc, argv); }
