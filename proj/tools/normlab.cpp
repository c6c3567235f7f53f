#include "normlab/harness.hpp"

int main(int argc, char** argv) { return normlab::harness::run_cli(argc, argv); }
