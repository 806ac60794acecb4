#include "regpilot/checks.hpp"

#include <cstdio>

int main() {
    std::puts("regpilot: CLI under construction");
    return 0;
}
