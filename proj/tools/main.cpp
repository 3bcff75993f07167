#include "cli.hpp"

int main(int argc, char** argv) { return muse::cli::run(argc, argv); }
