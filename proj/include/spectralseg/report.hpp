#pragma once

#include <array>
#include <string>
#include <vector>

#include "spectralseg/data.hpp"
#include "spectralseg/losses.hpp"
#include "spectralseg/model.hpp"

namespace spectralseg {

enum class TableStyle { table1, table2, table3 };

struct TableEntry {
  std::string label;     // method name or frequency-range label
  std::string ffc_flag;  // table2 only: "-" or "yes"
  std::string alpha;     // table2 only: "-" or the value
  std::array<double, kNumForeground> dice{};
  double mean = 0.0;
  std::string note;  // e.g. "reported, not reproduced"
};

TableEntry entry_from_report(const std::string& label, const EvalReport& rep);

// Rows quoted from the literature comparison file (never recomputed).
std::vector<TableEntry> load_literature_rows(const std::string& csv_path);

// Writes CSV and markdown twins with the exact per-style column order;
// class scores print with 2 decimals, means with 3.
void emit_tables(const std::vector<TableEntry>& entries, TableStyle style, const std::string& csv_path,
                 const std::string& md_path);

// Fixed 9-color palette (index = class id, 0 = background).
std::array<std::array<std::uint8_t, 3>, 9> class_palette();

// input | ground truth | prediction panels plus a legend strip on the right.
RgbImage render_overlay(const std::vector<double>& image_norm, int h, int w, const GrayImage& gt,
                        const GrayImage& pred);
void emit_overlay(SegmentationModel& model, const BScanRecord& record, const std::string& out_path);

}  // namespace spectralseg
