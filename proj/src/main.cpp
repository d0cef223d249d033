#include "focl/cli.hpp"

int main(int argc, char** argv) { return focl::cli_main(argc, argv); }
