#include "lfd/run_io.hpp"

int main(int argc, char** argv) { return lfd::cli_main(argc, argv); }
