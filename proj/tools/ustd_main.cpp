#include "ustd/cli.hpp"

int main(int argc, char** argv) { return ustd::run_cli(argc, argv); }
