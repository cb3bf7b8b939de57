#include "bridgenet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace bridgenet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// scene generation
// ---------------------------------------------------------------------------
void SceneConfig::validate() const {
  if (image < 4) throw ConfigError("scene: image size must be at least 4");
  if (min_shapes < 0) throw ConfigError("scene: min_shapes must be non-negative");
  if (max_shapes < min_shapes) throw ConfigError("scene: max_shapes < min_shapes");
  if (num_classes < 2) throw ConfigError("scene: need at least 2 classes (background + 1)");
  if (!(depth_near < depth_far)) throw ConfigError("scene: depth_near must be < depth_far");
  if (!(depth_near > 0)) throw ConfigError("scene: depth_near must be positive");
  if (noise < 0) throw ConfigError("scene: noise amplitude must be non-negative");
}

namespace {
constexpr double kTau = 6.283185307179586;

// splitmix-style decorrelation so the geometry and noise streams of one seed
// and the streams of adjacent seeds never overlap
uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + salt + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace

SceneDescription describe_scene(const SceneConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 1));
  const double range = cfg.depth_far - cfg.depth_near;
  SceneDescription d;
  // background plane: base in the far fifth, slopes bounded so the plane
  // stays inside [near, far] without clamping (max slope excursion 0.16 range)
  d.bg_base = cfg.depth_far - 0.20 * range + 0.02 * range * rng.uniform();
  d.bg_gx = rng.uniform(-0.08, 0.08) * range / cfg.image * 2.0;
  d.bg_gy = rng.uniform(-0.08, 0.08) * range / cfg.image * 2.0;
  for (double& c : d.bg_color) c = rng.uniform(0.15, 0.65);
  d.bg_freq_x = rng.uniform(0.02, 0.08);
  d.bg_freq_y = rng.uniform(0.02, 0.08);
  d.bg_phase = rng.uniform(0.0, kTau);

  const int count = cfg.min_shapes + rng.uniform_int(cfg.max_shapes - cfg.min_shapes + 1);
  for (int i = 0; i < count; ++i) {
    SceneShape s;
    s.ellipse = rng.uniform() < 0.5;
    s.cls = 1 + rng.uniform_int(cfg.num_classes - 1);
    s.cx = rng.uniform(0.15, 0.85) * (cfg.image - 1);
    s.cy = rng.uniform(0.15, 0.85) * (cfg.image - 1);
    s.hx = rng.uniform(0.08, 0.30) * cfg.image;
    s.hy = rng.uniform(0.08, 0.30) * cfg.image;
    // base in the near 60% of the range; per-pixel slope small enough that the
    // plane never leaves [near, far] over the footprint
    s.base = cfg.depth_near + rng.uniform(0.05, 0.60) * range;
    s.gx = rng.uniform(-0.1, 0.1) * range / cfg.image;
    s.gy = rng.uniform(-0.1, 0.1) * range / cfg.image;
    for (double& c : s.color) c = rng.uniform(0.2, 1.0);
    s.freq_x = rng.uniform(0.05, 0.25);
    s.freq_y = rng.uniform(0.05, 0.25);
    s.phase = rng.uniform(0.0, kTau);
    d.shapes.push_back(s);
  }
  return d;
}

double background_depth_at(const SceneDescription& desc, const SceneConfig& cfg, int x, int y) {
  const double half = 0.5 * (cfg.image - 1);
  return desc.bg_base + desc.bg_gx * (x - half) + desc.bg_gy * (y - half);
}

bool shape_covers(const SceneShape& s, int x, int y) {
  const double dx = x - s.cx, dy = y - s.cy;
  if (s.ellipse) {
    const double u = dx / s.hx, v = dy / s.hy;
    return u * u + v * v <= 1.0;
  }
  return std::abs(dx) <= s.hx && std::abs(dy) <= s.hy;
}

double shape_depth_at(const SceneShape& s, int x, int y) {
  return s.base + s.gx * (x - s.cx) + s.gy * (y - s.cy);
}

TensorF derive_normals(const TensorF& depth) {
  Shape sh = depth.shape();
  if (sh.size() == 3 && sh[0] == 1) sh = {sh[1], sh[2]};
  if (sh.size() != 2) throw ShapeError("derive_normals: expected [H, W] or [1, H, W]");
  const int h = sh[0], w = sh[1];
  const auto& d = depth.values();
  TensorF out(Shape{3, h, w}, 0.0f);
  auto at = [&](int y, int x) { return static_cast<double>(d[static_cast<size_t>(y * w + x)]); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
      const int yl = std::max(y - 1, 0), yr = std::min(y + 1, h - 1);
      const double dx = xr > xl ? (at(y, xr) - at(y, xl)) / (xr - xl) : 0.0;
      const double dy = yr > yl ? (at(yr, x) - at(yl, x)) / (yr - yl) : 0.0;
      const double norm = std::sqrt(dx * dx + dy * dy + 1.0);
      const size_t p = static_cast<size_t>(y * w + x);
      out.values()[p] = static_cast<float>(-dx / norm);
      out.values()[static_cast<size_t>(h * w) + p] = static_cast<float>(-dy / norm);
      out.values()[static_cast<size_t>(2 * h * w) + p] = static_cast<float>(1.0 / norm);
    }
  return out;
}

TensorF derive_edges(const IntTensor& seg) {
  if (seg.shape().size() != 2) throw ShapeError("derive_edges: expected [H, W]");
  const int h = seg.dim(0), w = seg.dim(1);
  const auto& s = seg.values();
  TensorF out(Shape{h, w}, 0.0f);
  auto lab = [&](int y, int x) { return s[static_cast<size_t>(y * w + x)]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int32_t c = lab(y, x);
      const bool edge = (x > 0 && lab(y, x - 1) != c) || (x + 1 < w && lab(y, x + 1) != c) ||
                        (y > 0 && lab(y - 1, x) != c) || (y + 1 < h && lab(y + 1, x) != c);
      if (edge) out.values()[static_cast<size_t>(y * w + x)] = 1.0f;
    }
  return out;
}

Sample render_scene(const SceneConfig& cfg, const SceneDescription& desc, uint64_t seed) {
  cfg.validate();
  const int n = cfg.image;
  Rng noise_rng(mix_seed(seed, 2));
  Sample s;
  s.image = TensorF(Shape{3, n, n}, 0.0f);
  s.seg = IntTensor(Shape{n, n}, 0);
  s.depth = TensorF(Shape{1, n, n}, 0.0f);
  s.depth_mask = TensorF(Shape{n, n}, 1.0f);
  s.normals_mask = TensorF(Shape{n, n}, 1.0f);
  const double range = cfg.depth_far - cfg.depth_near;

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double depth = background_depth_at(desc, cfg, x, y);
      int cls = 0;
      int winner = -1;
      for (size_t i = 0; i < desc.shapes.size(); ++i) {
        const SceneShape& sh = desc.shapes[i];
        if (!shape_covers(sh, x, y)) continue;
        const double d = shape_depth_at(sh, x, y);
        if (d < depth) {
          depth = d;
          cls = sh.cls;
          winner = static_cast<int>(i);
        }
      }
      const size_t p = static_cast<size_t>(y * n + x);
      s.seg.values()[p] = cls;
      s.depth.values()[p] = static_cast<float>(depth);

      const double* color = winner < 0 ? desc.bg_color : desc.shapes[static_cast<size_t>(winner)].color;
      double fx = desc.bg_freq_x, fy = desc.bg_freq_y, ph = desc.bg_phase;
      if (winner >= 0) {
        const SceneShape& sh = desc.shapes[static_cast<size_t>(winner)];
        fx = sh.freq_x;
        fy = sh.freq_y;
        ph = sh.phase;
      }
      const double shade = 1.0 - 0.45 * (depth - cfg.depth_near) / range;
      const double texture = 0.85 + 0.15 * std::sin(kTau * (fx * x + fy * y) + ph);
      for (int c = 0; c < 3; ++c)
        s.image.values()[static_cast<size_t>(c * n * n) + p] =
            static_cast<float>(color[c] * shade * texture);
    }

  // noise last, in a fixed scan order, so geometry draws never shift it
  if (cfg.noise > 0)
    for (auto& v : s.image.values())
      v += static_cast<float>(cfg.noise * noise_rng.normal());

  s.normals = derive_normals(s.depth);
  s.edges = derive_edges(s.seg);
  return s;
}

Sample generate_scene(const SceneConfig& cfg, uint64_t seed) {
  return render_scene(cfg, describe_scene(cfg, seed), seed);
}

// ---------------------------------------------------------------------------
// tensor container
// ---------------------------------------------------------------------------
namespace {
constexpr char kMagic[4] = {'B', 'T', 'N', 'R'};
constexpr uint8_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 1;
constexpr uint8_t kDtypeI32 = 2;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t float_bits(float f) {
  uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;
}

float bits_float(uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

// bounds-checked little-endian reader
struct Cursor {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  bool done() const { return pos >= bytes.size(); }
  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw FormatError(std::string("tensor archive: truncated ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = static_cast<uint32_t>(bytes[pos]) | (static_cast<uint32_t>(bytes[pos + 1]) << 8) |
                 (static_cast<uint32_t>(bytes[pos + 2]) << 16) |
                 (static_cast<uint32_t>(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  }
};

void serialize_record(std::vector<uint8_t>& out, const std::variant<TensorF, IntTensor>& value) {
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  const bool is_float = std::holds_alternative<TensorF>(value);
  out.push_back(is_float ? kDtypeF32 : kDtypeI32);
  const Shape& sh = is_float ? std::get<TensorF>(value).shape() : std::get<IntTensor>(value).shape();
  if (sh.size() > 255) throw FormatError("tensor archive: rank exceeds 255");
  out.push_back(static_cast<uint8_t>(sh.size()));
  for (int d : sh) put_u32(out, static_cast<uint32_t>(d));
  if (is_float) {
    for (float v : std::get<TensorF>(value).values()) put_u32(out, float_bits(v));
  } else {
    for (int32_t v : std::get<IntTensor>(value).values()) put_u32(out, static_cast<uint32_t>(v));
  }
}

std::variant<TensorF, IntTensor> deserialize_record(Cursor& cur) {
  cur.need(4, "magic");
  if (std::memcmp(cur.bytes.data() + cur.pos, kMagic, 4) != 0)
    throw FormatError("tensor archive: bad magic (expected BTNR)");
  cur.pos += 4;
  const uint8_t version = cur.u8("version");
  if (version != kVersion)
    throw FormatError("tensor archive: unsupported version " + std::to_string(version));
  const uint8_t dtype = cur.u8("dtype");
  if (dtype != kDtypeF32 && dtype != kDtypeI32)
    throw FormatError("tensor archive: unknown dtype code " + std::to_string(dtype));
  const uint8_t rank = cur.u8("rank");
  Shape sh(rank);
  int64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const uint32_t d = cur.u32("dims");
    sh[static_cast<size_t>(i)] = static_cast<int>(d);
    numel *= d;
  }
  if (dtype == kDtypeF32) {
    std::vector<float> vals(static_cast<size_t>(numel));
    for (auto& v : vals) v = bits_float(cur.u32("payload"));
    return TensorF(sh, std::move(vals));
  }
  std::vector<int32_t> vals(static_cast<size_t>(numel));
  for (auto& v : vals) v = static_cast<int32_t>(cur.u32("payload"));
  return IntTensor(sh, std::move(vals));
}
}  // namespace

std::vector<uint8_t> serialize_archive(const std::vector<ArchiveEntry>& entries) {
  std::set<std::string> seen;
  std::vector<uint8_t> out;
  for (const ArchiveEntry& e : entries) {
    if (!seen.insert(e.name).second)
      throw FormatError("tensor archive: duplicate name '" + e.name + "'");
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    serialize_record(out, e.value);
  }
  return out;
}

std::vector<ArchiveEntry> deserialize_archive(const std::vector<uint8_t>& bytes) {
  std::vector<ArchiveEntry> entries;
  std::set<std::string> seen;
  Cursor cur{bytes};
  while (!cur.done()) {
    const uint32_t name_len = cur.u32("name length");
    cur.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(bytes.data()) + cur.pos, name_len);
    cur.pos += name_len;
    if (!seen.insert(name).second)
      throw FormatError("tensor archive: duplicate name '" + name + "'");
    entries.push_back({std::move(name), deserialize_record(cur)});
  }
  return entries;
}

void save_archive(const std::string& path, const std::vector<ArchiveEntry>& entries) {
  const std::vector<uint8_t> bytes = serialize_archive(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

std::vector<ArchiveEntry> load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open for reading: " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("read failed: " + path);
  return deserialize_archive(bytes);
}

std::vector<ArchiveEntry> sample_to_entries(const Sample& s) {
  return {{"image", s.image},         {"seg", s.seg},
          {"depth", s.depth},         {"normals", s.normals},
          {"edges", s.edges},         {"depth_mask", s.depth_mask},
          {"normals_mask", s.normals_mask}};
}

namespace {
template <typename T>
const T& entry_as(const std::vector<ArchiveEntry>& entries, const std::string& name) {
  for (const ArchiveEntry& e : entries)
    if (e.name == name) {
      if (!std::holds_alternative<T>(e.value))
        throw FormatError("dataset archive: entry '" + name + "' has the wrong dtype");
      return std::get<T>(e.value);
    }
  throw FormatError("dataset archive: missing entry '" + name + "'");
}
}  // namespace

Sample sample_from_entries(const std::vector<ArchiveEntry>& entries) {
  Sample s;
  s.image = entry_as<TensorF>(entries, "image");
  s.seg = entry_as<IntTensor>(entries, "seg");
  s.depth = entry_as<TensorF>(entries, "depth");
  s.normals = entry_as<TensorF>(entries, "normals");
  s.edges = entry_as<TensorF>(entries, "edges");
  s.depth_mask = entry_as<TensorF>(entries, "depth_mask");
  s.normals_mask = entry_as<TensorF>(entries, "normals_mask");
  return s;
}

// ---------------------------------------------------------------------------
// dataset builder
// ---------------------------------------------------------------------------
std::string build_dataset(const SceneConfig& cfg, int n_train, int n_val,
                          const std::string& out_dir) {
  cfg.validate();
  if (n_train < 1 || n_val < 1)
    throw ConfigError("build_dataset: need at least 1 sample per split");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  std::ostringstream manifest;
  auto emit = [&](const char* split, int index, uint64_t seed) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04d.btnr", split, index);
    const Sample s = generate_scene(cfg, seed);
    save_archive((fs::path(out_dir) / name).string(), sample_to_entries(s));
    manifest << split << '\t' << name << '\t' << seed << '\n';
  };
  for (int i = 0; i < n_train; ++i) emit("train", i, cfg.seed + static_cast<uint64_t>(i));
  for (int i = 0; i < n_val; ++i)
    emit("val", i, cfg.seed + 1000000ull + static_cast<uint64_t>(i));

  const std::string manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + manifest_path);
  out << manifest.str();
  if (!out) throw IoError("write failed: " + manifest_path);
  return manifest_path;
}

std::vector<ManifestRow> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open for reading: " + manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<ManifestRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow row;
    std::string rel, seed_text;
    if (!std::getline(ls, row.split, '\t') || !std::getline(ls, rel, '\t') ||
        !std::getline(ls, seed_text))
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": expected split<TAB>path<TAB>seed");
    try {
      row.seed = std::stoull(seed_text);
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": bad seed '" + seed_text +
                        "'");
    }
    row.path = (dir / rel).string();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace bridgenet
