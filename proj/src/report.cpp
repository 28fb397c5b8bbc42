#include "spectralseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spectralseg {

TableEntry entry_from_report(const std::string& label, const EvalReport& rep) {
  TableEntry e;
  e.label = label;
  e.ffc_flag = "yes";
  e.dice = rep.per_class_dice;
  e.mean = rep.mean_dice;
  return e;
}

std::vector<TableEntry> load_literature_rows(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open literature file: " + csv_path);
  std::vector<TableEntry> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {  // column sanity: method + 8 classes + mean
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 10) {
      throw std::runtime_error("literature file: row with missing class column: " + line);
    }
    TableEntry e;
    e.label = cells[0];
    for (int k = 0; k < kNumForeground; ++k) e.dice[static_cast<size_t>(k)] = std::stod(cells[static_cast<size_t>(k) + 1]);
    e.mean = std::stod(cells[9]);
    e.note = "reported, not reproduced";
    rows.push_back(std::move(e));
  }
  return rows;
}

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::vector<std::string> header_for(TableStyle style) {
  std::vector<std::string> h;
  switch (style) {
    case TableStyle::table1: h = {"Method"}; break;
    case TableStyle::table2: h = {"FFC Block", "alpha"}; break;
    case TableStyle::table3: h = {"Spectral features range"}; break;
  }
  for (const auto& c : kClassNames) h.push_back(c);
  h.push_back("Mean");
  h.push_back("Note");
  return h;
}

std::vector<std::string> cells_for(const TableEntry& e, TableStyle style) {
  std::vector<std::string> c;
  switch (style) {
    case TableStyle::table1: c = {e.label}; break;
    case TableStyle::table2: c = {e.ffc_flag, e.alpha.empty() ? "-" : e.alpha}; break;
    case TableStyle::table3: c = {e.label}; break;
  }
  for (double d : e.dice) c.push_back(fmt2(d));
  c.push_back(fmt3(e.mean));
  c.push_back(e.note);
  return c;
}

}  // namespace

void emit_tables(const std::vector<TableEntry>& entries, TableStyle style, const std::string& csv_path,
                 const std::string& md_path) {
  if (entries.empty()) throw std::invalid_argument("emit_tables: no rows to write");
  const std::vector<std::string> header = header_for(style);

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    for (size_t i = 0; i < header.size(); ++i) csv << (i ? "," : "") << header[i];
    csv << "\n";
    for (const auto& e : entries) {
      const auto cells = cells_for(e, style);
      for (size_t i = 0; i < cells.size(); ++i) csv << (i ? "," : "") << cells[i];
      csv << "\n";
    }
  }

  if (!md_path.empty()) {
    std::ofstream md(md_path);
    if (!md) throw std::runtime_error("cannot write " + md_path);
    md << "|";
    for (const auto& h : header) md << " " << h << " |";
    md << "\n|";
    for (size_t i = 0; i < header.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& e : entries) {
      md << "|";
      for (const auto& c : cells_for(e, style)) md << " " << c << " |";
      md << "\n";
    }
  }
}

std::array<std::array<std::uint8_t, 3>, 9> class_palette() {
  return {{{0, 0, 0},        // background
           {230, 25, 75},    // ILM
           {60, 180, 75},    // NFL-IPL
           {255, 225, 25},   // INL
           {0, 130, 200},    // OPL
           {245, 130, 48},   // ONL-ISM
           {145, 30, 180},   // ISE
           {70, 240, 240},   // OS-RPE
           {240, 50, 230}}}; // Fluid
}

RgbImage render_overlay(const std::vector<double>& image_norm, int h, int w, const GrayImage& gt,
                        const GrayImage& pred) {
  if (gt.h != h || gt.w != w || pred.h != h || pred.w != w) {
    throw std::invalid_argument("render_overlay: panel shape mismatch");
  }
  constexpr int kLegend = 60;
  const auto pal = class_palette();
  RgbImage out(h, 3 * w + kLegend);

  // grayscale panel from the z-scored image, windowed to +-2.5 sigma
  double lo = -2.5, hi = 2.5;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double v = (image_norm[static_cast<size_t>(i) * w + j] - lo) / (hi - lo);
      const auto g = static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
      out.set(i, j, g, g, g);
      const auto& cg = pal[gt.at(i, j) % 9];
      out.set(i, w + j, cg[0], cg[1], cg[2]);
      const auto& cp = pal[pred.at(i, j) % 9];
      out.set(i, 2 * w + j, cp[0], cp[1], cp[2]);
    }
  }
  // legend: nine horizontal color bands, background first
  const int band = h / 9;
  for (int i = 0; i < h; ++i) {
    const int cls = std::min(8, band > 0 ? i / band : 0);
    for (int j = 0; j < kLegend; ++j) {
      const auto& c = pal[static_cast<size_t>(cls)];
      out.set(i, 3 * w + j, c[0], c[1], c[2]);
    }
  }
  return out;
}

void emit_overlay(SegmentationModel& model, const BScanRecord& record, const std::string& out_path) {
  const int H = model.config().input_h, W = model.config().input_w;
  const Sample s = preprocess(record, H, W);
  Tensor x(1, 1, H, W);
  std::copy(s.image.begin(), s.image.end(), x.data());
  const Tensor logits = model.predict(x);
  const LabelBatch pred = argmax_channels(logits);

  GrayImage gt(H, W), pr(H, W);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      gt.at(i, j) = static_cast<std::uint8_t>(s.mask[static_cast<size_t>(i) * W + j]);
      pr.at(i, j) = static_cast<std::uint8_t>(pred.at(0, i, j));
    }
  }
  write_png_rgb(out_path, render_overlay(s.image, H, W, gt, pr));
}

}  // namespace spectralseg
