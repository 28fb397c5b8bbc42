#include "spectralseg/matfile.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace spectralseg {

namespace {

// MAT v5 data type codes
enum : std::uint32_t {
  miINT8 = 1,
  miUINT8 = 2,
  miINT16 = 3,
  miUINT16 = 4,
  miINT32 = 5,
  miUINT32 = 6,
  miSINGLE = 7,
  miDOUBLE = 9,
  miINT64 = 12,
  miUINT64 = 13,
  miMATRIX = 14,
  miCOMPRESSED = 15,
  miUTF8 = 16,
};

struct Cursor {
  const std::uint8_t* p;
  size_t n;
  size_t off = 0;

  void need(size_t k) const {
    if (off + k > n) throw std::runtime_error("mat file: truncated element");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p + off, 4);
    off += 4;
    return v;
  }
  const std::uint8_t* bytes(size_t k) {
    need(k);
    const std::uint8_t* r = p + off;
    off += k;
    return r;
  }
  void align8() { off = (off + 7) & ~static_cast<size_t>(7); }
  bool done() const { return off >= n; }
};

struct Element {
  std::uint32_t type;
  const std::uint8_t* data;
  size_t size;
};

Element read_element(Cursor& c) {
  c.align8();
  std::uint32_t tag = c.u32();
  Element e;
  if ((tag & 0xffff0000u) != 0) {
    // small data element: size in the upper 16 bits, payload in the next word
    e.type = tag & 0xffffu;
    e.size = tag >> 16;
    e.data = c.bytes(4);
  } else {
    e.type = tag;
    e.size = c.u32();
    e.data = c.bytes(e.size);
  }
  return e;
}

double convert_at(const std::uint8_t* p, std::uint32_t type, size_t i) {
  switch (type) {
    case miINT8: return static_cast<double>(reinterpret_cast<const std::int8_t*>(p)[i]);
    case miUINT8: return static_cast<double>(p[i]);
    case miINT16: { std::int16_t v; std::memcpy(&v, p + 2 * i, 2); return v; }
    case miUINT16: { std::uint16_t v; std::memcpy(&v, p + 2 * i, 2); return v; }
    case miINT32: { std::int32_t v; std::memcpy(&v, p + 4 * i, 4); return v; }
    case miUINT32: { std::uint32_t v; std::memcpy(&v, p + 4 * i, 4); return v; }
    case miSINGLE: { float v; std::memcpy(&v, p + 4 * i, 4); return v; }
    case miDOUBLE: { double v; std::memcpy(&v, p + 8 * i, 8); return v; }
    case miINT64: { std::int64_t v; std::memcpy(&v, p + 8 * i, 8); return static_cast<double>(v); }
    case miUINT64: { std::uint64_t v; std::memcpy(&v, p + 8 * i, 8); return static_cast<double>(v); }
    default: throw std::runtime_error("mat file: unsupported numeric storage type " + std::to_string(type));
  }
}

size_t type_size(std::uint32_t type) {
  switch (type) {
    case miINT8:
    case miUINT8: return 1;
    case miINT16:
    case miUINT16: return 2;
    case miINT32:
    case miUINT32:
    case miSINGLE: return 4;
    default: return 8;
  }
}

void parse_matrix(const Element& e, std::map<std::string, MatArray>& out) {
  Cursor c{e.data, e.size};
  const Element flags = read_element(c);
  if (flags.type != miUINT32 || flags.size < 8) throw std::runtime_error("mat file: malformed array flags");
  std::uint32_t flagword;
  std::memcpy(&flagword, flags.data, 4);
  const std::uint32_t klass = flagword & 0xff;
  const bool is_complex = (flagword & 0x0800) != 0;
  // numeric classes are mxDOUBLE(6) .. mxUINT64(15); anything else is skipped
  if (klass < 6 || klass > 15) return;

  const Element dims_el = read_element(c);
  const int ndims = static_cast<int>(dims_el.size / 4);
  std::vector<int> dims(static_cast<size_t>(ndims));
  for (int i = 0; i < ndims; ++i) {
    std::int32_t d;
    std::memcpy(&d, dims_el.data + 4 * i, 4);
    dims[static_cast<size_t>(i)] = d;
  }

  const Element name_el = read_element(c);
  std::string name(reinterpret_cast<const char*>(name_el.data), name_el.size);

  const Element data_el = read_element(c);
  size_t count = 1;
  for (int d : dims) count *= static_cast<size_t>(d);
  const size_t avail = data_el.size / type_size(data_el.type);
  if (avail < count) throw std::runtime_error("mat file: array '" + name + "' has truncated data");

  MatArray arr;
  arr.name = name;
  arr.dims = dims;
  arr.data.resize(count);
  for (size_t i = 0; i < count; ++i) arr.data[i] = convert_at(data_el.data, data_el.type, i);
  (void)is_complex;  // imaginary part, when present, trails the real part and is ignored
  out.emplace(name, std::move(arr));
}

std::vector<std::uint8_t> inflate_all(const std::uint8_t* src, size_t n) {
  std::vector<std::uint8_t> out;
  out.resize(std::max<size_t>(n * 4, 1 << 16));
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw std::runtime_error("zlib init failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(n);
  size_t written = 0;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("mat file: corrupt compressed element");
    }
    written = out.size() - zs.avail_out;
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

}  // namespace

std::map<std::string, MatArray> read_mat_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open mat file: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 128) throw std::runtime_error("mat file too short: " + path);
  if (!(buf[126] == 'I' && buf[127] == 'M')) {
    throw std::runtime_error("mat file: expected little-endian v5 format: " + path);
  }

  std::map<std::string, MatArray> out;
  Cursor c{buf.data() + 128, buf.size() - 128};
  while (!c.done()) {
    c.align8();
    if (c.off + 8 > c.n) break;
    const Element e = read_element(c);
    if (e.type == miMATRIX) {
      parse_matrix(e, out);
    } else if (e.type == miCOMPRESSED) {
      const std::vector<std::uint8_t> raw = inflate_all(e.data, e.size);
      Cursor ic{raw.data(), raw.size()};
      const Element inner = read_element(ic);
      if (inner.type == miMATRIX) parse_matrix(inner, out);
    }
    // other top-level element types carry no array payload for our purposes
  }
  return out;
}

void write_mat_file(const std::string& path, const std::vector<MatArray>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  std::vector<std::uint8_t> header(128, 0);
  const char* text = "MATLAB 5.0 MAT-file, spectralseg writer";
  std::memcpy(header.data(), text, std::strlen(text));
  for (size_t i = std::strlen(text); i < 116; ++i) header[i] = ' ';
  header[124] = 0x00;
  header[125] = 0x01;  // version 0x0100
  header[126] = 'I';
  header[127] = 'M';
  out.write(reinterpret_cast<const char*>(header.data()), 128);

  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  for (const auto& a : arrays) {
    const size_t name_pad = (a.name.size() + 7) & ~static_cast<size_t>(7);
    const size_t dims_bytes = a.dims.size() * 4;
    const size_t dims_pad = (dims_bytes + 7) & ~static_cast<size_t>(7);
    const size_t data_bytes = a.data.size() * 8;
    const size_t total = 16 /*flags*/ + 8 + dims_pad + 8 + name_pad + 8 + data_bytes;

    put_u32(miMATRIX);
    put_u32(static_cast<std::uint32_t>(total));
    // array flags: class mxDOUBLE_CLASS = 6
    put_u32(miUINT32);
    put_u32(8);
    put_u32(6);
    put_u32(0);
    // dimensions
    put_u32(miINT32);
    put_u32(static_cast<std::uint32_t>(dims_bytes));
    for (int d : a.dims) {
      std::int32_t v = d;
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
    for (size_t i = dims_bytes; i < dims_pad; ++i) out.put('\0');
    // name
    put_u32(miINT8);
    put_u32(static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    for (size_t i = a.name.size(); i < name_pad; ++i) out.put('\0');
    // data
    put_u32(miDOUBLE);
    put_u32(static_cast<std::uint32_t>(data_bytes));
    out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(data_bytes));
  }
  if (!out) throw std::runtime_error("failed writing mat file: " + path);
}

}  // namespace spectralseg
