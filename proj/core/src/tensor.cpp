#include "lear/tensor.hpp"

// Tensor is header-only; this TU anchors the target.
