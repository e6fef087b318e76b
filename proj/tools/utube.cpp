#include <utube/cli.hpp>

int main(int argc, char** argv) { return utube::cli_main(argc, argv); }
