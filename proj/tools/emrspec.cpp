#include "emr/cli.hpp"

int main(int argc, char** argv) { return emr::cli::main_guarded(argc, argv); }
