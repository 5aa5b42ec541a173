#include "icps/cli.hpp"

int main(int argc, char** argv) { return icps::cli_main(argc, argv); }
