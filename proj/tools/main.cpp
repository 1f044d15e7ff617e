#include "mono3d/cli.hpp"

int main(int argc, char** argv) { return mono3d::cli_main(argc, argv); }
