#pragma once

#include <string>

#include "atm/backends.hpp"

namespace atm {

// 8-bit PNG round trip; values are quantized to 0..255 on write.
void write_png(const ImageArray& image, const std::string& path);
ImageArray read_png(const std::string& path);

}  // namespace atm
