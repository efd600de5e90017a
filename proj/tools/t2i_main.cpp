#include "t2i/cli.hpp"

int main(int argc, char** argv) { return t2i::cli_main(argc, argv); }
