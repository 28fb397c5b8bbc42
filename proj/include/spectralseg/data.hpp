#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spectralseg/image_io.hpp"
#include "spectralseg/losses.hpp"
#include "spectralseg/tensor.hpp"

namespace spectralseg {

// One OCT cross-section with its class-index mask. Labels: 0 background,
// 1..7 the retinal layers in anatomical order, 8 fluid.
struct BScanRecord {
  int patient_id = 0;
  int scan_index = 0;
  GrayImage image;
  GrayImage mask;
};

struct RecordRef {
  int patient_id = 0;
  int scan_index = 0;
  std::string image_rel;
  std::string mask_rel;
};

struct DatasetManifest {
  std::string root;
  std::string provenance;  // "duke" or "synthetic"
  std::uint64_t seed = 0;
  std::map<int, std::string> patient_split;  // patient_id -> train|val|test
  std::vector<RecordRef> records;

  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);

  const std::string& split_of(int patient_id) const;
  std::vector<int> indices_for_split(const std::string& split) const;
};

BScanRecord load_record(const DatasetManifest& m, int index);

// Fixed patient split: 1-6 train, 7-8 val, 9-10 test.
std::map<int, std::string> fixed_622_split();

// Region mask from 8 boundary curves (rows, NaN = undefined) plus the fluid
// mask overlay. Rows r with b_k <= r < b_{k+1} get label k+1; columns with any
// undefined boundary fall back to background; fluid pixels always become 8.
GrayImage boundary_to_mask(const std::vector<double>& boundaries, int W, const GrayImage& fluid, int H0);

// Preprocessed sample: bilinear-resized z-scored image, nearest-neighbor mask.
struct Sample {
  int h = 0, w = 0;
  std::vector<double> image;
  std::vector<std::int32_t> mask;
};

Sample preprocess(const BScanRecord& r, int out_h = 224, int out_w = 224);

std::vector<double> bilinear_resize(const std::vector<double>& src, int h0, int w0, int h1, int w1);
GrayImage nearest_resize_mask(const GrayImage& src, int h1, int w1);

// Layered speckle phantom corpus: 8 anatomical bands with per-layer grain,
// 0-3 smooth low-intensity fluid blobs per image. Deterministic in `seed`.
DatasetManifest generate_synthetic(std::uint64_t seed, int n, const std::string& out_dir);

// Converts the per-subject MATLAB containers (images, manualLayers1,
// manualFluid1) into the PNG corpus + manifest; expert-1 annotated scans only.
DatasetManifest ingest_duke(const std::string& raw_dir, const std::string& out_dir);

// warning channel for data repairs (crossing boundaries, degenerate images)
void data_warning(const std::string& msg);
std::int64_t data_warning_count();

}  // namespace spectralseg
