#include "suites.hpp"

int main(int argc, char** argv) { return dbmsv::cli::cli_main(argc, argv); }
