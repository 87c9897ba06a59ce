#include <cstdio>

int main() {
    std::puts("ccorbit: subcommands not wired up yet");
    return 1;
}
