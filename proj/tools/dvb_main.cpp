#include "dvb/cli.hpp"

int main(int argc, char** argv) { return dvb::cli::run(argc, argv); }
