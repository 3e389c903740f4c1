#include "ccmed/threading.hpp"

namespace ccmed {

int& max_threads() {
  static int value = 1;
  return value;
}

}  // namespace ccmed
