#include "anomem/cli.hpp"

int main(int argc, char** argv) { return anomem::cli_main(argc, argv); }
