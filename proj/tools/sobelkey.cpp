#include "sobelkey/cli.hpp"

int main(int argc, char** argv) { return sobelkey::cli_run(argc, argv); }
