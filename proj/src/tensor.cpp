#include "lesionnet/tensor.hpp"

namespace lesionnet {

std::string Shape::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(dims_[i]);
  }
  return out;
}

}  // namespace lesionnet
