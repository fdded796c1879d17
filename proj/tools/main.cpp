#include "lexbias/cli.hpp"

int main(int argc, char** argv) { return lexbias::cli::run_cli(argc, argv); }
