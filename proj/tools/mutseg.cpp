#include "mutseg/cli.hpp"

int main(int argc, char** argv) { return mutseg::run_cli(argc, argv); }
