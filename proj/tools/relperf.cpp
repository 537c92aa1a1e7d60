#include "cli_app.hpp"

int main(int argc, char** argv) { return relperf::cli::run(argc, argv); }
