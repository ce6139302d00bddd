#include "xseg/commands.hpp"

int main(int argc, char** argv) { return xseg::cli::run(argc, argv); }
