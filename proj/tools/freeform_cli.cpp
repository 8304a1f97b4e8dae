#include "freeform/harness.hpp"

int main(int argc, char** argv) { return freeform::harness::run_cli(argc, argv); }
