#include <abn/cli.hpp>

#include <iostream>

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return abn::cli::dispatch(args, std::cout, std::cerr);
}
