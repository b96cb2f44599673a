#include <vector>
#include <string>

#include "cola/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cola::cli::run(args);
}
