#include "covshift/cli.hpp"

int main(int argc, char** argv) { return covshift::run_cli(argc, argv); }
