#include <unept/cli.hpp>

int main(int argc, char** argv) { return unept::run_cli(argc, argv); }
