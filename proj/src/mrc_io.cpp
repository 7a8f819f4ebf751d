#include "tgd/mrc_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tgd/errors.hpp"

namespace tgd {

namespace {

template <typename T>
T load(std::span<const std::uint8_t> bytes, std::size_t offset, bool big_endian) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), bytes.data() + offset, sizeof(T));
  const bool host_big = std::endian::native == std::endian::big;
  if (big_endian != host_big) std::reverse(raw.begin(), raw.end());
  T value;
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

template <typename T>
void store_le(std::vector<std::uint8_t>& out, std::size_t offset, T value) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  std::memcpy(out.data() + offset, raw.data(), sizeof(T));
}

std::size_t mode_bytes(std::int32_t mode) {
  switch (mode) {
    case 0: return 1;
    case 1: return 2;
    case 2: return 4;
    default: return 0;
  }
}

bool plausible_dims(std::span<const std::uint8_t> b, bool big) {
  for (std::size_t off : {0u, 4u, 8u}) {
    const auto v = load<std::int32_t>(b, off, big);
    if (v < 1 || v > (1 << 24)) return false;
  }
  const auto mode = load<std::int32_t>(b, 12, big);
  return mode >= 0 && mode < 256;
}

std::string field_error(const std::string& name, const std::string& field, const std::string& why) {
  return name + ": malformed MRC header field " + field + " (" + why + ")";
}

}  // namespace

MrcHeader parse_mrc_header(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() < kMrcHeaderBytes)
    throw TruncationError(name + ": header truncated, expected " + std::to_string(kMrcHeaderBytes) +
                          " bytes, found " + std::to_string(bytes.size()));
  MrcHeader h;
  // Machine stamp: 0x44 0x44/0x41 little-endian, 0x11 0x11 big-endian.
  const std::uint8_t stamp = bytes[212];
  if (stamp == 0x44 || stamp == 0x41) {
    h.big_endian = false;
  } else if (stamp == 0x11) {
    h.big_endian = true;
  } else if (plausible_dims(bytes, false)) {
    h.big_endian = false;
  } else if (plausible_dims(bytes, true)) {
    h.big_endian = true;
  } else {
    throw FormatError(field_error(name, "MACHST", "unrecognised machine stamp"));
  }
  const bool be = h.big_endian;

  if (std::memcmp(bytes.data() + 208, "MAP ", 4) != 0)
    throw FormatError(field_error(name, "MAP", "missing 'MAP ' identifier"));

  h.nx = load<std::int32_t>(bytes, 0, be);
  h.ny = load<std::int32_t>(bytes, 4, be);
  h.nz = load<std::int32_t>(bytes, 8, be);
  if (h.nx < 1) throw FormatError(field_error(name, "NX", "must be >= 1, got " + std::to_string(h.nx)));
  if (h.ny < 1) throw FormatError(field_error(name, "NY", "must be >= 1, got " + std::to_string(h.ny)));
  if (h.nz < 1) throw FormatError(field_error(name, "NZ", "must be >= 1, got " + std::to_string(h.nz)));
  h.mode = load<std::int32_t>(bytes, 12, be);
  if (mode_bytes(h.mode) == 0)
    throw UnsupportedModeError(name + ": MRC mode " + std::to_string(h.mode) +
                               " is not supported (only 0, 1, 2)");
  for (int i = 0; i < 3; ++i) {
    h.start[i] = load<std::int32_t>(bytes, 16 + 4 * i, be);
    h.grid[i] = load<std::int32_t>(bytes, 28 + 4 * i, be);
    h.cell_lengths[i] = load<float>(bytes, 40 + 4 * i, be);
    h.cell_angles[i] = load<float>(bytes, 52 + 4 * i, be);
    h.axis_map[i] = load<std::int32_t>(bytes, 64 + 4 * i, be);
    h.origin[i] = load<float>(bytes, 196 + 4 * i, be);
  }
  static constexpr const char* kAxisNames[3] = {"MAPC", "MAPR", "MAPS"};
  for (int i = 0; i < 3; ++i)
    if (h.axis_map[i] != i + 1)
      throw FormatError(field_error(name, kAxisNames[i],
                                    "only column-major order 1,2,3 is supported, got " +
                                        std::to_string(h.axis_map[i])));
  h.dmin = load<float>(bytes, 76, be);
  h.dmax = load<float>(bytes, 80, be);
  h.dmean = load<float>(bytes, 84, be);
  h.space_group = load<std::int32_t>(bytes, 88, be);
  h.extended_bytes = load<std::int32_t>(bytes, 92, be);
  if (h.extended_bytes < 0)
    throw FormatError(field_error(name, "NSYMBT", "negative extended header size"));
  h.version = load<std::int32_t>(bytes, 108, be);
  h.rms = load<float>(bytes, 216, be);
  const auto nlabels = load<std::int32_t>(bytes, 220, be);
  if (nlabels < 0 || nlabels > 10) throw FormatError(field_error(name, "NLABL", "must be in 0..10"));
  for (int i = 0; i < nlabels; ++i) {
    const char* p = reinterpret_cast<const char*>(bytes.data() + 224 + 80 * i);
    std::string label(p, strnlen(p, 80));
    while (!label.empty() && label.back() == ' ') label.pop_back();
    h.labels.push_back(std::move(label));
  }
  return h;
}

MrcObject parse_mrc(std::span<const std::uint8_t> bytes, const std::string& name) {
  const MrcHeader h = parse_mrc_header(bytes, name);
  const std::size_t n = static_cast<std::size_t>(h.nx) * h.ny * h.nz;
  const std::size_t data_offset = kMrcHeaderBytes + static_cast<std::size_t>(h.extended_bytes);
  const std::size_t expected = data_offset + n * mode_bytes(h.mode);
  if (bytes.size() < expected)
    throw TruncationError(name + ": data section truncated, expected " + std::to_string(expected - data_offset) +
                          " bytes, found " +
                          std::to_string(bytes.size() > data_offset ? bytes.size() - data_offset : 0));

  std::vector<double> values(n);
  const auto data = bytes.subspan(data_offset);
  switch (h.mode) {
    case 0:
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<std::int8_t>(data[i]);
      break;
    case 1:
      for (std::size_t i = 0; i < n; ++i) values[i] = load<std::int16_t>(data, 2 * i, h.big_endian);
      break;
    case 2:
      for (std::size_t i = 0; i < n; ++i) values[i] = load<float>(data, 4 * i, h.big_endian);
      break;
  }

  auto spacing = [&](int axis, int count) {
    const int grid = h.grid[axis] > 0 ? h.grid[axis] : count;
    const double cell = h.cell_lengths[axis];
    return (cell > 0.0 && std::isfinite(cell)) ? cell / grid : 1.0;
  };
  const std::string label = h.labels.empty() ? std::string{} : h.labels.front();

  if (h.nz == 1) {
    Micrograph m;
    m.data = Image(h.ny, h.nx, std::move(values));
    m.pixel_size_angstrom = spacing(0, h.nx);
    m.origin = {h.origin[0], h.origin[1]};
    m.provenance = label;
    return m;
  }
  Volume v;
  v.nz = h.nz;
  v.ny = h.ny;
  v.nx = h.nx;
  v.data = std::move(values);
  v.voxel_size_angstrom = spacing(0, h.nx);
  return v;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

MrcObject read_mrc(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return parse_mrc(read_file_bytes(path), path.string());
}

MrcHeader read_mrc_header(const std::filesystem::path& path) {
  return parse_mrc_header(read_file_bytes(path), path.string());
}

Micrograph read_micrograph(const std::filesystem::path& path) {
  auto obj = read_mrc(path);
  if (auto* m = std::get_if<Micrograph>(&obj)) return std::move(*m);
  throw ShapeError(path.string() + ": expected a single-section micrograph, found a volume");
}

Volume read_volume(const std::filesystem::path& path) {
  auto obj = read_mrc(path);
  if (auto* v = std::get_if<Volume>(&obj)) return std::move(*v);
  auto& m = std::get<Micrograph>(obj);
  Volume v(1, m.data.height(), m.data.width(), m.pixel_size_angstrom);
  v.data = m.data.vector();
  return v;
}

namespace {

std::vector<std::uint8_t> encode(int nx, int ny, int nz, std::span<const double> values, double spacing,
                                 std::array<double, 2> origin, const std::string& label,
                                 int space_group) {
  for (double v : values)
    if (!std::isfinite(v)) throw ParameterError("cannot write non-finite values to MRC");
  const std::size_t n = values.size();
  std::vector<std::uint8_t> out(kMrcHeaderBytes + 4 * n, 0);

  std::vector<float> f(n);
  double sum = 0.0;
  float lo = n ? static_cast<float>(values[0]) : 0.0f;
  float hi = lo;
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = static_cast<float>(values[i]);
    lo = std::min(lo, f[i]);
    hi = std::max(hi, f[i]);
    sum += f[i];
  }
  const double m = n ? sum / static_cast<double>(n) : 0.0;
  double ss = 0.0;
  for (float x : f) ss += (x - m) * (x - m);
  const double rms = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;

  store_le<std::int32_t>(out, 0, nx);
  store_le<std::int32_t>(out, 4, ny);
  store_le<std::int32_t>(out, 8, nz);
  store_le<std::int32_t>(out, 12, 2);
  store_le<std::int32_t>(out, 28, nx);
  store_le<std::int32_t>(out, 32, ny);
  store_le<std::int32_t>(out, 36, nz);
  store_le<float>(out, 40, static_cast<float>(spacing * nx));
  store_le<float>(out, 44, static_cast<float>(spacing * ny));
  store_le<float>(out, 48, static_cast<float>(spacing * nz));
  for (int i = 0; i < 3; ++i) {
    store_le<float>(out, 52 + 4 * i, 90.0f);
    store_le<std::int32_t>(out, 64 + 4 * i, i + 1);
  }
  store_le<float>(out, 76, lo);
  store_le<float>(out, 80, hi);
  store_le<float>(out, 84, static_cast<float>(m));
  store_le<std::int32_t>(out, 88, space_group);
  store_le<std::int32_t>(out, 108, 20140);
  store_le<float>(out, 196, static_cast<float>(origin[0]));
  store_le<float>(out, 200, static_cast<float>(origin[1]));
  std::memcpy(out.data() + 208, "MAP ", 4);
  out[212] = 0x44;
  out[213] = 0x44;
  store_le<float>(out, 216, static_cast<float>(rms));
  if (!label.empty()) {
    store_le<std::int32_t>(out, 220, 1);
    std::memset(out.data() + 224, ' ', 80);
    std::memcpy(out.data() + 224, label.data(), std::min<std::size_t>(label.size(), 80));
  }
  for (std::size_t i = 0; i < n; ++i) store_le<float>(out, kMrcHeaderBytes + 4 * i, f[i]);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_mrc(const Micrograph& m) {
  validate(m);
  return encode(m.data.width(), m.data.height(), 1, m.data.values(), m.pixel_size_angstrom, m.origin,
                m.provenance, 0);
}

std::vector<std::uint8_t> encode_mrc(const Volume& v, const std::string& label, bool image_stack) {
  validate(v);
  return encode(v.nx, v.ny, v.nz, v.data, v.voxel_size_angstrom, {0.0, 0.0}, label,
                image_stack ? 0 : 1);
}

void write_mrc(const Micrograph& m, const std::filesystem::path& path) {
  write_file_bytes(path, encode_mrc(m));
}

void write_mrc(const Volume& v, const std::filesystem::path& path, const std::string& label) {
  write_file_bytes(path, encode_mrc(v, label));
}

}  // namespace tgd
