#include "cli_app.hpp"

int main(int argc, char** argv) { return stylesplat::cli::run(argc, argv); }
