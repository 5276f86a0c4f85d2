// SPDX-License-Identifier: Apache-2.0
#include "shardgrad/shardgrad.hpp"

int main(int argc, char** argv) { return shardgrad::shardgrad_main(argc, argv); }
