#include "synthbase/cli.hpp"

int main(int argc, char** argv) { return synthbase::cli::run(argc, argv); }
