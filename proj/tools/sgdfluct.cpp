#include "cli.hpp"

int main(int argc, char** argv) { return sgdfluct::cli::main_entry(argc, argv); }
