#include "spectralseg/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "spectralseg/matfile.hpp"
#include "spectralseg/rng.hpp"

namespace fs = std::filesystem;

namespace spectralseg {

namespace {
std::atomic<std::int64_t> g_warnings{0};

std::string scan_stem(int patient_id, int scan_index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "p%02d_s%03d", patient_id, scan_index);
  return buf;
}
}  // namespace

void data_warning(const std::string& msg) {
  ++g_warnings;
  std::fprintf(stderr, "[spectralseg:data] warning: %s\n", msg.c_str());
}

std::int64_t data_warning_count() { return g_warnings.load(); }

std::map<int, std::string> fixed_622_split() {
  std::map<int, std::string> split;
  for (int p = 1; p <= 6; ++p) split[p] = "train";
  split[7] = split[8] = "val";
  split[9] = split[10] = "test";
  return split;
}

void DatasetManifest::save(const std::string& path) const {
  nlohmann::json j;
  j["provenance"] = provenance;
  j["seed"] = seed;
  j["class_names"] = kClassNames;
  nlohmann::json sp = nlohmann::json::object();
  for (const auto& [pid, s] : patient_split) sp[std::to_string(pid)] = s;
  j["split"] = sp;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    recs.push_back({{"patient_id", r.patient_id},
                    {"scan_index", r.scan_index},
                    {"image", r.image_rel},
                    {"mask", r.mask_rel}});
  }
  j["records"] = recs;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  m.provenance = j.at("provenance").get<std::string>();
  m.seed = j.value("seed", 0ULL);
  for (const auto& [k, v] : j.at("split").items()) m.patient_split[std::stoi(k)] = v.get<std::string>();
  for (const auto& r : j.at("records")) {
    m.records.push_back({r.at("patient_id").get<int>(), r.at("scan_index").get<int>(),
                         r.at("image").get<std::string>(), r.at("mask").get<std::string>()});
  }
  return m;
}

const std::string& DatasetManifest::split_of(int patient_id) const {
  auto it = patient_split.find(patient_id);
  if (it == patient_split.end()) {
    throw std::runtime_error("patient " + std::to_string(patient_id) + " missing from the split map");
  }
  return it->second;
}

std::vector<int> DatasetManifest::indices_for_split(const std::string& split) const {
  std::vector<int> idx;
  for (size_t i = 0; i < records.size(); ++i) {
    if (split_of(records[i].patient_id) == split) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

BScanRecord load_record(const DatasetManifest& m, int index) {
  const RecordRef& r = m.records.at(static_cast<size_t>(index));
  BScanRecord rec;
  rec.patient_id = r.patient_id;
  rec.scan_index = r.scan_index;
  rec.image = read_png_gray((fs::path(m.root) / r.image_rel).string());
  rec.mask = read_png_gray((fs::path(m.root) / r.mask_rel).string());
  if (rec.image.h != rec.mask.h || rec.image.w != rec.mask.w) {
    throw std::runtime_error("record " + r.image_rel + ": image/mask shape mismatch");
  }
  return rec;
}

GrayImage boundary_to_mask(const std::vector<double>& boundaries, int W, const GrayImage& fluid, int H0) {
  if (boundaries.size() != static_cast<size_t>(8 * W)) {
    throw std::invalid_argument("boundary_to_mask: expected 8 x W boundary rows");
  }
  if (fluid.h != H0 || fluid.w != W) throw std::invalid_argument("boundary_to_mask: fluid mask shape mismatch");
  GrayImage mask(H0, W);
  int repaired_cols = 0;
  for (int j = 0; j < W; ++j) {
    double b[8];
    bool defined = true;
    for (int k = 0; k < 8; ++k) {
      b[k] = boundaries[static_cast<size_t>(k) * W + j];
      if (!std::isfinite(b[k])) defined = false;
    }
    if (defined) {
      bool sorted = true;
      for (int k = 0; k + 1 < 8; ++k) {
        if (b[k] > b[k + 1]) sorted = false;
      }
      if (!sorted) {
        std::sort(b, b + 8);
        ++repaired_cols;
      }
      for (int i = 0; i < H0; ++i) {
        int label = 0;
        for (int k = 0; k + 1 < 8; ++k) {
          if (static_cast<double>(i) >= b[k] && static_cast<double>(i) < b[k + 1]) {
            label = k + 1;
            break;
          }
        }
        mask.at(i, j) = static_cast<std::uint8_t>(label);
      }
    }
    for (int i = 0; i < H0; ++i) {
      if (fluid.at(i, j)) mask.at(i, j) = 8;
    }
  }
  if (repaired_cols > 0) {
    data_warning("boundary_to_mask: repaired " + std::to_string(repaired_cols) + " crossing column(s) by sorting");
  }
  return mask;
}

std::vector<double> bilinear_resize(const std::vector<double>& src, int h0, int w0, int h1, int w1) {
  std::vector<double> dst(static_cast<size_t>(h1) * w1);
  const double sy = static_cast<double>(h0) / h1;
  const double sx = static_cast<double>(w0) / w1;
  for (int i = 0; i < h1; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h0 - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h0 - 1);
    const double wy = fy - y0;
    for (int j = 0; j < w1; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w0 - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w0 - 1);
      const double wx = fx - x0;
      const double v00 = src[static_cast<size_t>(y0) * w0 + x0];
      const double v01 = src[static_cast<size_t>(y0) * w0 + x1];
      const double v10 = src[static_cast<size_t>(y1) * w0 + x0];
      const double v11 = src[static_cast<size_t>(y1) * w0 + x1];
      dst[static_cast<size_t>(i) * w1 + j] =
          (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  return dst;
}

GrayImage nearest_resize_mask(const GrayImage& src, int h1, int w1) {
  GrayImage dst(h1, w1);
  for (int i = 0; i < h1; ++i) {
    const int si = std::min(src.h - 1, static_cast<int>((i + 0.5) * src.h / h1));
    for (int j = 0; j < w1; ++j) {
      const int sj = std::min(src.w - 1, static_cast<int>((j + 0.5) * src.w / w1));
      dst.at(i, j) = src.at(si, sj);
    }
  }
  return dst;
}

Sample preprocess(const BScanRecord& r, int out_h, int out_w) {
  std::vector<double> img(r.image.v.size());
  for (size_t i = 0; i < img.size(); ++i) img[i] = r.image.v[i] / 255.0;
  Sample s;
  s.h = out_h;
  s.w = out_w;
  s.image = bilinear_resize(img, r.image.h, r.image.w, out_h, out_w);

  double mean = 0.0;
  for (double v : s.image) mean += v;
  mean /= static_cast<double>(s.image.size());
  double var = 0.0;
  for (double v : s.image) var += (v - mean) * (v - mean);
  var /= static_cast<double>(s.image.size());
  const double sd = std::sqrt(var);
  if (sd < 1e-9) {
    data_warning("preprocess: constant image (patient " + std::to_string(r.patient_id) + ", scan " +
                 std::to_string(r.scan_index) + "), emitting zeros");
    std::fill(s.image.begin(), s.image.end(), 0.0);
  } else {
    for (double& v : s.image) v = (v - mean) / sd;
  }

  const GrayImage m = nearest_resize_mask(r.mask, out_h, out_w);
  s.mask.assign(m.v.begin(), m.v.end());
  return s;
}

// ---------------------------------------------------------------------------
// synthetic corpus

namespace {

// box blur with side `s`, rescaled to keep unit-ish variance for white input
void box_blur(std::vector<double>& f, int H, int W, int s) {
  if (s <= 1) return;
  std::vector<double> tmp(f.size());
  const int r = s / 2;
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      double acc = 0.0;
      int cnt = 0;
      for (int d = -r; d <= r; ++d) {
        const int jj = j + d;
        if (jj >= 0 && jj < W) {
          acc += f[static_cast<size_t>(i) * W + jj];
          ++cnt;
        }
      }
      tmp[static_cast<size_t>(i) * W + j] = acc / cnt;
    }
  }
  for (int j = 0; j < W; ++j) {
    for (int i = 0; i < H; ++i) {
      double acc = 0.0;
      int cnt = 0;
      for (int d = -r; d <= r; ++d) {
        const int ii = i + d;
        if (ii >= 0 && ii < H) {
          acc += tmp[static_cast<size_t>(ii) * W + j];
          ++cnt;
        }
      }
      f[static_cast<size_t>(i) * W + j] = acc * s / cnt;
    }
  }
}

struct LayerStyle {
  double mean;
  double speckle;
  int grain;
};

}  // namespace

DatasetManifest generate_synthetic(std::uint64_t seed, int n, const std::string& out_dir) {
  if (n < 10) throw std::invalid_argument("generate_synthetic: need n >= 10 (one scan per synthetic patient)");
  const int H = 224, W = 224;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  DatasetManifest m;
  m.root = out_dir;
  m.provenance = "synthetic";
  m.seed = seed;
  m.patient_split = fixed_622_split();

  Rng rng(seed);
  const double base_means[7] = {0.58, 0.34, 0.66, 0.30, 0.70, 0.80, 0.50};

  for (int pid = 1; pid <= 10; ++pid) {
    const int scans = n / 10 + (pid <= n % 10 ? 1 : 0);
    // per-patient anatomy
    double thickness[7];
    double tsum = 0.0;
    for (double& t : thickness) {
      t = rng.uniform(0.6, 1.6);
      tsum += t;
    }
    const double band_top = H * rng.uniform(0.18, 0.24);
    const double band_height = H * rng.uniform(0.48, 0.56);
    for (double& t : thickness) t *= band_height / tsum;
    LayerStyle styles[9];  // 0 = background, 1..7 layers, 8 fluid
    styles[0] = {0.06, 0.5, 1};
    for (int k = 0; k < 7; ++k) {
      styles[k + 1] = {std::clamp(base_means[k] + rng.uniform(-0.05, 0.05), 0.1, 0.92),
                       rng.uniform(0.30, 0.45), 1 + (k % 3)};
    }

    for (int s = 0; s < scans; ++s) {
      // smooth retina arc plus per-boundary wiggle
      const double arc_amp = rng.uniform(-12.0, 12.0);
      const double arc_phase = rng.uniform(0.0, 3.14159);
      std::vector<double> boundaries(8 * static_cast<size_t>(W));
      for (int j = 0; j < W; ++j) {
        const double arc = arc_amp * std::sin(3.14159 * j / W + arc_phase);
        double row = band_top + arc + rng.uniform(-1.0, 1.0) * 0.0;  // top boundary
        boundaries[static_cast<size_t>(j)] = row;
        for (int k = 0; k < 7; ++k) {
          row += thickness[k];
          boundaries[static_cast<size_t>(k + 1) * W + j] = row;
        }
      }
      for (int k = 0; k < 8; ++k) {
        const double amp = rng.uniform(0.5, 3.0);
        const double freq = rng.uniform(1.0, 3.0);
        const double ph = rng.uniform(0.0, 6.28318);
        for (int j = 0; j < W; ++j) {
          boundaries[static_cast<size_t>(k) * W + j] += amp * std::sin(freq * 6.28318 * j / W + ph);
        }
      }

      // fluid blobs: smooth, slightly darker pockets inside the band
      const int nblobs = rng.uniform_int(0, 3);
      struct Blob {
        double cx, cy, rx, ry;
      };
      std::vector<Blob> blobs;
      GrayImage fluid(H, W);
      for (int bi = 0; bi < nblobs; ++bi) {
        Blob b;
        b.rx = rng.uniform(17.0, 30.0);
        b.ry = rng.uniform(10.0, 16.0);
        b.cx = rng.uniform(b.rx + 2.0, W - b.rx - 2.0);
        const int jc = std::clamp(static_cast<int>(b.cx), 0, W - 1);
        const double lo = boundaries[static_cast<size_t>(1) * W + jc] + b.ry + 1.0;
        const double hi = boundaries[static_cast<size_t>(6) * W + jc] - b.ry - 1.0;
        if (hi <= lo) continue;
        b.cy = rng.uniform(lo, hi);
        blobs.push_back(b);
        for (int i = std::max(0, static_cast<int>(b.cy - b.ry)); i <= std::min(H - 1, static_cast<int>(b.cy + b.ry)); ++i) {
          for (int j = std::max(0, static_cast<int>(b.cx - b.rx)); j <= std::min(W - 1, static_cast<int>(b.cx + b.rx)); ++j) {
            const double dx = (j - b.cx) / b.rx;
            const double dy = (i - b.cy) / b.ry;
            if (dx * dx + dy * dy <= 1.0) fluid.at(i, j) = 1;
          }
        }
      }

      GrayImage mask = boundary_to_mask(boundaries, W, fluid, H);

      // per-layer speckle fields (one per style, layer-specific grain)
      std::vector<std::vector<double>> noise(9, std::vector<double>(static_cast<size_t>(H) * W));
      for (int k = 0; k < 9; ++k) {
        for (auto& v : noise[static_cast<size_t>(k)]) v = rng.normal();
        box_blur(noise[static_cast<size_t>(k)], H, W, styles[k].grain);
      }
      std::vector<double> fine(static_cast<size_t>(H) * W);
      for (auto& v : fine) v = rng.normal();

      GrayImage img(H, W);
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const int lbl = mask.at(i, j);
          double v;
          if (lbl == 8) {
            // fluid: intensity tied to the straddled band, nearly speckle-free
            int host = 4;
            for (int k = 0; k + 1 < 8; ++k) {
              const double bk = boundaries[static_cast<size_t>(k) * W + j];
              const double bk1 = boundaries[static_cast<size_t>(k + 1) * W + j];
              if (i >= bk && i < bk1) {
                host = k + 1;
                break;
              }
            }
            v = styles[host].mean * 0.80 * (1.0 + 0.05 * fine[static_cast<size_t>(i) * W + j]);
          } else {
            const LayerStyle& st = styles[lbl];
            v = st.mean * (1.0 + st.speckle * noise[static_cast<size_t>(lbl)][static_cast<size_t>(i) * W + j]);
          }
          img.at(i, j) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        }
      }

      const std::string stem = scan_stem(pid, s);
      write_png_gray((fs::path(out_dir) / "images" / (stem + ".png")).string(), img);
      write_png_gray((fs::path(out_dir) / "masks" / (stem + ".png")).string(), mask);
      m.records.push_back({pid, s, "images/" + stem + ".png", "masks/" + stem + ".png"});
    }
  }

  m.save((fs::path(out_dir) / "manifest.json").string());
  return m;
}

// ---------------------------------------------------------------------------
// Duke ingestion

DatasetManifest ingest_duke(const std::string& raw_dir, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  DatasetManifest m;
  m.root = out_dir;
  m.provenance = "duke";
  m.patient_split = fixed_622_split();

  for (int pid = 1; pid <= 10; ++pid) {
    char fname[32];
    std::snprintf(fname, sizeof(fname), "Subject_%02d.mat", pid);
    const fs::path path = fs::path(raw_dir) / fname;
    if (!fs::exists(path)) {
      throw std::runtime_error("ingestion error: missing subject file for patient " + std::to_string(pid) + ": " +
                               path.string());
    }
    auto arrays = read_mat_file(path.string());
    auto need = [&](const char* key) -> const MatArray& {
      auto it = arrays.find(key);
      if (it == arrays.end()) {
        throw std::runtime_error("format error: " + path.string() + " lacks array '" + key + "'");
      }
      return it->second;
    };
    const MatArray& images = need("images");
    const MatArray& layers = need("manualLayers1");
    const MatArray& fluid = need("manualFluid1");
    if (images.dims.size() != 3 || layers.dims.size() != 3 || layers.dims[0] != 8) {
      throw std::runtime_error("format error: unexpected array shapes in " + path.string());
    }
    const int H0 = images.dims[0], W0 = images.dims[1], S = images.dims[2];
    if (layers.dims[1] != W0 || fluid.dims[0] != H0 || fluid.dims[1] != W0) {
      throw std::runtime_error("format error: annotation dims disagree with images in " + path.string());
    }

    for (int s = 0; s < S; ++s) {
      bool annotated = false;
      for (int k = 0; k < 8 && !annotated; ++k) {
        for (int j = 0; j < W0; ++j) {
          if (std::isfinite(layers.at(k, j, s))) {
            annotated = true;
            break;
          }
        }
      }
      if (!annotated) continue;

      std::vector<double> boundaries(8 * static_cast<size_t>(W0));
      for (int k = 0; k < 8; ++k) {
        for (int j = 0; j < W0; ++j) boundaries[static_cast<size_t>(k) * W0 + j] = layers.at(k, j, s);
      }
      GrayImage fl(H0, W0);
      if (s < fluid.dims[2]) {
        for (int i = 0; i < H0; ++i) {
          for (int j = 0; j < W0; ++j) {
            const double v = fluid.at(i, j, s);
            fl.at(i, j) = (std::isfinite(v) && v > 0.0) ? 1 : 0;
          }
        }
      }
      GrayImage mask = boundary_to_mask(boundaries, W0, fl, H0);

      GrayImage img(H0, W0);
      for (int i = 0; i < H0; ++i) {
        for (int j = 0; j < W0; ++j) {
          const double v = images.at(i, j, s);
          img.at(i, j) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
        }
      }

      const std::string stem = scan_stem(pid, s);
      write_png_gray((fs::path(out_dir) / "images" / (stem + ".png")).string(), img);
      write_png_gray((fs::path(out_dir) / "masks" / (stem + ".png")).string(), mask);
      m.records.push_back({pid, s, "images/" + stem + ".png", "masks/" + stem + ".png"});
    }
  }

  m.save((fs::path(out_dir) / "manifest.json").string());
  return m;
}

}  // namespace spectralseg
