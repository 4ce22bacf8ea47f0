// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "cmega/cli.hpp"

int main(int argc, char** argv) {
    return cmega::run_cli(std::vector<std::string>(argv, argv + argc));
}
