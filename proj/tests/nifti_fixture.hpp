#pragma once

// A NIfTI-1 single file laid out byte by byte, independent of the reader.

#include <cstdint>
#include <cstring>
#include <vector>

namespace volnet::testing {

template <typename T>
void put(std::vector<char>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

/// Little-endian, dims 2x2x2, int16 samples 1..8 in file order (x fastest),
/// pixdim (0.5, 0.75, 2), payload at byte 352.
inline std::vector<char> hand_nifti() {
  std::vector<char> buf(352 + 8 * 2, 0);
  put<std::int32_t>(buf, 0, 348);
  const std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, 40 + 2 * static_cast<std::size_t>(i), dim[i]);
  put<std::int16_t>(buf, 70, 4);   // datatype: int16
  put<std::int16_t>(buf, 72, 16);  // bitpix
  const float pixdim[8] = {1, 0.5f, 0.75f, 2, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<float>(buf, 76 + 4 * static_cast<std::size_t>(i), pixdim[i]);
  put<float>(buf, 108, 352.0f);  // vox_offset
  put<float>(buf, 112, 1.0f);    // scl_slope
  put<float>(buf, 116, 0.0f);    // scl_inter
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  for (int i = 0; i < 8; ++i) {
    put<std::int16_t>(buf, 352 + 2 * static_cast<std::size_t>(i), static_cast<std::int16_t>(i + 1));
  }
  return buf;
}

}  // namespace volnet::testing
