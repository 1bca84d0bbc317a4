#include "driftmon/cli.hpp"

int main(int argc, char** argv) { return driftmon::run_cli(argc, argv); }
