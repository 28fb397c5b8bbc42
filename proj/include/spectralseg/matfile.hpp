#pragma once

#include <map>
#include <string>
#include <vector>

namespace spectralseg {

// Numeric array from a MATLAB Level-5 container; data converted to double,
// dims in MATLAB (column-major) order. NaN markers are preserved.
struct MatArray {
  std::string name;
  std::vector<int> dims;
  std::vector<double> data;  // column-major

  // value at (i, j) of slice k for 2-D/3-D arrays
  double at(int i, int j, int k = 0) const {
    const int d0 = dims[0];
    const int d1 = dims.size() > 1 ? dims[1] : 1;
    return data[static_cast<size_t>(i) + static_cast<size_t>(d0) * (static_cast<size_t>(j) + static_cast<size_t>(d1) * k)];
  }
};

// Reads every numeric array in the file (v5 layout, plain or zlib-compressed
// elements). Non-numeric entries are skipped.
std::map<std::string, MatArray> read_mat_file(const std::string& path);

// Minimal writer (uncompressed v5, double arrays); used to build fixtures.
void write_mat_file(const std::string& path, const std::vector<MatArray>& arrays);

}  // namespace spectralseg
