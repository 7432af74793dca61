#include <cstdio>

int main() {
  std::puts("dqs: placeholder");
  return 0;
}
