#include "ugdiml/cli.hpp"

int main(int argc, char** argv) { return ugdiml::run_cli(argc, argv); }
