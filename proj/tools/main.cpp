#include "ibnn/cli.hpp"

int main(int argc, char** argv) { return ibnn::cli::run(argc, argv); }
