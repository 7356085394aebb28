#include "dcgnet/cli.hpp"

int main(int argc, char** argv) { return dcgnet::run_cli(argc, argv); }
