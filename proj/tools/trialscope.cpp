#include "trialscope/cli.hpp"

int main(int argc, char** argv) { return trialscope::run_cli(argc, argv); }
