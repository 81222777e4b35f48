#include "dforge/cli.hpp"

int main(int argc, char** argv) { return dforge::cli::parse_and_dispatch(argc, argv); }
