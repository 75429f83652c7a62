#include "pneumo/cli.hpp"

int main(int argc, char** argv) { return pneumo::run_cli(argc, argv); }
