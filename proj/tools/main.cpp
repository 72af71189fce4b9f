#include "advmr/runio.hpp"

int main(int argc, char** argv) {
    return advmr::run_cli(argc, argv);
}
