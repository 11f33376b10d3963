#include "crisisfuse/cli.hpp"

int main(int argc, char** argv) { return crisisfuse::run_cli(argc, argv); }
