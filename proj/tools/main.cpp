#include "cli.hpp"

int main(int argc, char** argv) { return knnfuse::cli::run(argc, argv); }
