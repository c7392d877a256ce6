// SPDX-License-Identifier: Apache-2.0
#include "fodiff/data_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace fodiff::io {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

constexpr std::uint64_t kPreambleSize = 10;

std::string read_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open file for reading", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad())
    throw IoError("read failure", path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open file for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failure", path.string());
}

template <class T>
void put(std::string& buf, T value)
{
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::uint64_t offset)
{
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

std::string frame(const char magic[4], const std::string& header, const std::string& payload)
{
  std::string buf(magic, 4);
  put<std::uint16_t>(buf, kFormatVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(header.size()));
  buf += header;
  buf += payload;
  return buf;
}

struct Framed {
  std::map<std::string, std::string> header;
  std::uint64_t payload_offset = 0;
};

Framed unframe(const std::string& bytes, const char magic[4])
{
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected \"") + std::string(magic, 4) + "\"", 0);
  if (bytes.size() < kPreambleSize)
    throw FormatError("truncated preamble", bytes.size());
  const auto version = get<std::uint16_t>(bytes, 4);
  if (version != kFormatVersion)
    throw VersionMismatch(version, kFormatVersion, 4);
  const auto hlen = get<std::uint32_t>(bytes, 6);
  if (kPreambleSize + hlen > bytes.size())
    throw FormatError("header length " + std::to_string(hlen) + " exceeds file size", 6);

  Framed f;
  f.payload_offset = kPreambleSize + hlen;
  std::uint64_t pos = kPreambleSize;
  while (pos < f.payload_offset) {
    std::uint64_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos || eol > f.payload_offset)
      eol = f.payload_offset;
    const std::string line = bytes.substr(pos, eol - pos);
    if (!line.empty()) {
      const auto colon = line.find(": ");
      if (colon == std::string::npos)
        throw FormatError("malformed header line \"" + line + "\"", pos);
      f.header[line.substr(0, colon)] = line.substr(colon + 2);
    }
    pos = eol + 1;
  }
  return f;
}

const std::string& require(const Framed& f, const std::string& key)
{
  auto it = f.header.find(key);
  if (it == f.header.end())
    throw FormatError("missing header key \"" + key + "\"", kPreambleSize);
  return it->second;
}

Grid3 parse_dims(const Framed& f)
{
  std::istringstream is(require(f, "dims"));
  Grid3 g;
  if (!(is >> g.nx >> g.ny >> g.nz) || g.nx <= 0 || g.ny <= 0 || g.nz <= 0)
    throw FormatError("invalid dims \"" + require(f, "dims") + "\"", kPreambleSize);
  return g;
}

void check_payload(const std::string& bytes, const Framed& f, std::uint64_t expected)
{
  const std::uint64_t actual = bytes.size() - f.payload_offset;
  if (actual < expected)
    throw FormatError("truncated payload: expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(actual),
                      bytes.size());
  if (actual > expected)
    throw FormatError("trailing data: expected " + std::to_string(expected) +
                          " payload bytes, found " + std::to_string(actual),
                      f.payload_offset + expected);
}

std::string exact(double v)
{
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

} // namespace

void write_fod(const std::filesystem::path& path, const FodImage& image)
{
  image.validate();
  std::ostringstream h;
  h << "dims: " << image.grid.nx << ' ' << image.grid.ny << ' ' << image.grid.nz << '\n'
    << "n_volumes: " << sh::kNumCoeffs << '\n'
    << "lmax: " << sh::kLmax << '\n'
    << "voxel_size: " << exact(image.voxel_size.x()) << ' ' << exact(image.voxel_size.y()) << ' '
    << exact(image.voxel_size.z()) << '\n'
    << "dtype: float32le\n";
  std::string payload(reinterpret_cast<const char*>(image.coeffs.data()),
                      sizeof(float) * static_cast<std::size_t>(image.coeffs.size()));
  write_file(path, frame("FODC", h.str(), payload));
}

FodImage read_fod(const std::filesystem::path& path)
{
  const std::string bytes = read_file(path);
  const Framed f = unframe(bytes, "FODC");
  const Grid3 grid = parse_dims(f);
  if (require(f, "dtype") != "float32le")
    throw FormatError("unsupported dtype \"" + require(f, "dtype") + "\"", kPreambleSize);
  if (require(f, "n_volumes") != std::to_string(sh::kNumCoeffs) ||
      require(f, "lmax") != std::to_string(sh::kLmax))
    throw FormatError("only lmax 8 / 45 volumes are supported", kPreambleSize);

  FodImage img(grid);
  {
    std::istringstream is(require(f, "voxel_size"));
    if (!(is >> img.voxel_size.x() >> img.voxel_size.y() >> img.voxel_size.z()))
      throw FormatError("invalid voxel_size", kPreambleSize);
  }
  const std::uint64_t expected = sizeof(float) * sh::kNumCoeffs * static_cast<std::uint64_t>(grid.size());
  check_payload(bytes, f, expected);
  std::memcpy(img.coeffs.data(), bytes.data() + f.payload_offset, expected);
  if (!img.coeffs.allFinite())
    throw FormatError("non-finite coefficient in payload", f.payload_offset);
  img.brain = nonzero_voxels(img.coeffs);
  return img;
}

void write_mask(const std::filesystem::path& path, const VoxelMask& mask, const Grid3& grid)
{
  if (mask.size() != grid.size())
    throw InvalidArgument("write_mask: mask size does not match grid");
  if (((mask != 0) && (mask != 1)).any())
    throw InvalidArgument("write_mask: mask values must be 0 or 1");
  std::ostringstream h;
  h << "dims: " << grid.nx << ' ' << grid.ny << ' ' << grid.nz << '\n' << "dtype: uint8\n";
  std::string payload(reinterpret_cast<const char*>(mask.data()), static_cast<std::size_t>(mask.size()));
  write_file(path, frame("FODM", h.str(), payload));
}

VoxelMask read_mask(const std::filesystem::path& path, Grid3& grid)
{
  const std::string bytes = read_file(path);
  const Framed f = unframe(bytes, "FODM");
  grid = parse_dims(f);
  if (require(f, "dtype") != "uint8")
    throw FormatError("unsupported dtype \"" + require(f, "dtype") + "\"", kPreambleSize);
  const auto expected = static_cast<std::uint64_t>(grid.size());
  check_payload(bytes, f, expected);
  VoxelMask m(grid.size());
  std::memcpy(m.data(), bytes.data() + f.payload_offset, expected);
  for (Eigen::Index v = 0; v < m.size(); ++v)
    if (m[v] > 1)
      throw FormatError("mask value " + std::to_string(m[v]) + " is not 0 or 1",
                        f.payload_offset + static_cast<std::uint64_t>(v));
  return m;
}

void write_scale_table(const std::filesystem::path& path, const ScaleTable& table)
{
  nlohmann::json j;
  j["format"] = "fodiff-scale-table";
  j["version"] = kFormatVersion;
  j["scale"] = table.scale;
  write_file(path, j.dump(2) + "\n");
}

ScaleTable read_scale_table(const std::filesystem::path& path)
{
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("scale table is not valid JSON: ") + e.what(), e.byte);
  }
  if (j.value("format", "") != "fodiff-scale-table")
    throw FormatError("not a scale table", 0);
  if (j.value("version", 0) != kFormatVersion)
    throw VersionMismatch(j.value("version", 0), kFormatVersion, 0);
  const auto& s = j.at("scale");
  if (!s.is_array() || s.size() != sh::kNumOrders)
    throw FormatError("scale table must hold 5 entries", 0);
  ScaleTable t;
  for (int o = 0; o < sh::kNumOrders; ++o) {
    t.scale[o] = s[o].get<double>();
    if (!(t.scale[o] > 0.0))
      throw FormatError("scale table entries must be positive", 0);
  }
  return t;
}

const Eigen::MatrixXf& Checkpoint::tensor(const std::string& name) const
{
  for (const auto& t : tensors)
    if (t.name == name)
      return t.value;
  throw ConfigError("checkpoint has no tensor \"" + name + "\"");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& t : ckpt.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
    payload.append(reinterpret_cast<const char*>(t.value.data()),
                   sizeof(float) * static_cast<std::size_t>(t.value.size()));
  }
  // Write to a sibling file first so a crash never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file(tmp, frame("FODK", header.dump(), payload));
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
  const std::string bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FODK", 4) != 0)
    throw FormatError("bad magic, expected \"FODK\"", 0);
  if (bytes.size() < kPreambleSize)
    throw FormatError("truncated preamble", bytes.size());
  const auto version = get<std::uint16_t>(bytes, 4);
  if (version != kFormatVersion)
    throw VersionMismatch(version, kFormatVersion, 4);
  const auto hlen = get<std::uint32_t>(bytes, 6);
  if (kPreambleSize + hlen > bytes.size())
    throw FormatError("header length exceeds file size", 6);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPreambleSize, hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), kPreambleSize + e.byte);
  }
  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  std::uint64_t pos = kPreambleSize + hlen;
  for (const auto& t : header.at("tensors")) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const std::uint64_t n = sizeof(float) * static_cast<std::uint64_t>(rows * cols);
    if (pos + n > bytes.size())
      throw FormatError("truncated tensor \"" + nt.name + "\": expected " + std::to_string(n) +
                            " bytes, found " + std::to_string(bytes.size() - pos),
                        bytes.size());
    nt.value.resize(rows, cols);
    std::memcpy(nt.value.data(), bytes.data() + pos, n);
    pos += n;
    ckpt.tensors.push_back(std::move(nt));
  }
  if (pos != bytes.size())
    throw FormatError("trailing data after tensors", pos);
  return ckpt;
}

std::string fnv1a_hex(const std::string& bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string file_digest(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

std::vector<phantom::DatasetItem> Manifest::split(const std::string& name) const
{
  std::vector<phantom::DatasetItem> out;
  for (const auto& it : items)
    if (it.split == name)
      out.push_back(it);
  return out;
}

void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest)
{
  write_file(path, manifest.dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& path)
{
  const std::string text = read_file(path);
  Manifest m;
  m.directory = path.parent_path();
  try {
    m.raw = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), e.byte);
  }
  if (m.raw.value("format", "") != "fodiff-manifest")
    throw FormatError("not a dataset manifest", 0);
  try {
    for (const auto& [split, entries] : m.raw.at("splits").items())
      for (const auto& e : entries) {
        phantom::DatasetItem it;
        it.split = split;
        it.id = e.at("id").get<std::string>();
        it.seed = e.at("seed").get<std::uint64_t>();
        it.severity = e.at("severity").get<double>();
        it.gt_path = e.at("gt").get<std::string>();
        it.corrupted_path = e.at("corrupted").get<std::string>();
        it.mask_path = e.at("mask").get<std::string>();
        m.items.push_back(std::move(it));
      }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), 0);
  }
  return m;
}

LoadedItem load_item(const Manifest& manifest, const phantom::DatasetItem& item)
{
  LoadedItem out;
  out.meta = item;
  out.gt = read_fod(manifest.resolve(item.gt_path));
  out.corrupted = read_fod(manifest.resolve(item.corrupted_path));
  Grid3 g;
  out.mask = read_mask(manifest.resolve(item.mask_path), g);
  if (!(g == out.gt.grid) || !(out.corrupted.grid == out.gt.grid))
    throw FormatError("item " + item.id + ": grids of gt/corrupted/mask disagree", 0);
  // The ground truth defines the brain mask.
  out.corrupted.brain = out.gt.brain;
  return out;
}

std::vector<LoadedItem> load_split(const Manifest& manifest, const std::string& split)
{
  std::vector<LoadedItem> out;
  for (const auto& it : manifest.split(split))
    out.push_back(load_item(manifest, it));
  return out;
}

} // namespace fodiff::io
