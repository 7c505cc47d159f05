#include "gcap/cli.hpp"

int main(int argc, char** argv) { return gcap::cli_dispatch(argc, argv); }
