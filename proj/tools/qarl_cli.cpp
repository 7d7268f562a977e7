#include "qarl/cli.hpp"

int main(int argc, char** argv) { return qarl::run_cli(argc, argv); }
