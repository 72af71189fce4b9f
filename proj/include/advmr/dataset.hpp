#pragma once

#include <string>
#include <vector>

#include "advmr/phantom.hpp"

namespace advmr {

// Directory layout: <path>/manifest.json plus <path>/blobs/<id>.bin with
// 64-bit little-endian reals (interleaved re/im for complex tensors) and a
// CRC32 per record. See docs/format.md. Writes go through a temporary
// directory and a final rename, so a failed save leaves no partial dataset.
void save_dataset(const std::string& path, const std::vector<Phantom>& set);
std::vector<Phantom> load_dataset(const std::string& path);

} // namespace advmr
