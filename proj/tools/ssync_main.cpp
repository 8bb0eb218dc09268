#include "ssync/cli.hpp"

int main(int argc, char** argv) { return ssync::cli_main(argc, argv); }
