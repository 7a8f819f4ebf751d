#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tgd/image.hpp"

namespace tgd {

/// Parsed subset of an MRC2014 header. Word offsets follow the 2014 standard.
struct MrcHeader {
  std::int32_t nx = 0, ny = 0, nz = 0;
  std::int32_t mode = 2;
  std::array<std::int32_t, 3> start{0, 0, 0};
  std::array<std::int32_t, 3> grid{0, 0, 0};       // MX, MY, MZ
  std::array<float, 3> cell_lengths{0, 0, 0};      // CELLA, Angstrom
  std::array<float, 3> cell_angles{90, 90, 90};    // CELLB
  std::array<std::int32_t, 3> axis_map{1, 2, 3};   // MAPC, MAPR, MAPS
  float dmin = 0, dmax = 0, dmean = 0;
  std::int32_t space_group = 0;
  std::int32_t extended_bytes = 0;                 // NSYMBT
  std::int32_t version = 20140;
  std::array<float, 3> origin{0, 0, 0};
  float rms = 0;
  bool big_endian = false;
  std::vector<std::string> labels;
};

constexpr std::size_t kMrcHeaderBytes = 1024;

using MrcObject = std::variant<Micrograph, Volume>;

/// Parses an in-memory MRC file. `name` is used in error messages only.
/// Returns a Micrograph when NZ == 1, a Volume otherwise.
MrcObject parse_mrc(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
MrcHeader parse_mrc_header(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");

MrcObject read_mrc(const std::filesystem::path& path);
MrcHeader read_mrc_header(const std::filesystem::path& path);

/// Convenience readers. read_volume also accepts single-section files (nz = 1).
Micrograph read_micrograph(const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

/// Mode-2, little-endian encodings with header statistics filled in.
/// `label` is stored as the first 80-character header label.
std::vector<std::uint8_t> encode_mrc(const Micrograph& m);
std::vector<std::uint8_t> encode_mrc(const Volume& v, const std::string& label = "",
                                     bool image_stack = false);

void write_mrc(const Micrograph& m, const std::filesystem::path& path);
void write_mrc(const Volume& v, const std::filesystem::path& path, const std::string& label = "");

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tgd
