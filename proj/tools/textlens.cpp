#include "textlens/cli.hpp"

int main(int argc, char** argv) { return textlens::run_cli(argc, argv); }
