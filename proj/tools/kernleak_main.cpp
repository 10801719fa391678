#include "kernleak/harness.hpp"

int main(int argc, char** argv) {
    return kernleak::run_cli(argc, argv);
}
