// Synthetic multi-task scenes and the binary tensor container.
//
// Scenes are z-buffered compositions of axis-aligned rectangles and ellipses
// over a gradient background plane. The task maps are genuinely correlated:
// edges are exactly the segmentation boundary set and normals are exactly the
// depth-derivative field, so cross-task structure carries real signal.
//
// The container is a little-endian tagged record ("BTNR" + version) holding
// one tensor; archives concatenate (name length, name, record) triples and
// round-trip bitwise for f32 and i32 payloads.
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bridgenet/tensor.hpp"

namespace bridgenet {

// ---------------------------------------------------------------------------
// scene generation
// ---------------------------------------------------------------------------
struct SceneConfig {
  int image = 64;        // square output, image x image
  int min_shapes = 3;    // inclusive range of shape count per scene
  int max_shapes = 6;
  int num_classes = 5;   // K: background (0) plus K-1 shape classes
  double depth_near = 0.5;
  double depth_far = 2.0;
  double noise = 0.02;   // additive image noise amplitude
  uint64_t seed = 0;     // dataset base seed; per-sample seeds derive from it

  void validate() const;  // throws ConfigError
};

struct Sample {
  TensorF image;         // [3, H, W], shaded render + noise
  IntTensor seg;         // [H, W], values in [0, K)
  TensorF depth;         // [1, H, W], visible-surface depth in [near, far]
  TensorF normals;       // [3, H, W], unit vectors from the depth derivative
  TensorF edges;         // [H, W], 1 where any 4-neighbor label differs
  TensorF depth_mask;    // [H, W], > 0 where depth supervision is valid
  TensorF normals_mask;  // [H, W]
};

// One placed surface. Coverage: rectangles by |x-cx| <= hx and |y-cy| <= hy,
// ellipses by the unit-disc test on the scaled offsets. Depth inside the
// footprint is the plane base + gx*(x-cx) + gy*(y-cy).
struct SceneShape {
  bool ellipse = false;
  int cls = 1;                       // segmentation class, in [1, K)
  double cx = 0, cy = 0;             // center, pixel units
  double hx = 1, hy = 1;             // half extents
  double base = 1, gx = 0, gy = 0;   // depth plane
  double color[3] = {0.5, 0.5, 0.5};
  double freq_x = 0, freq_y = 0, phase = 0;  // texture sinusoid
};

// The full geometric layout of a scene: a background depth plane (class 0)
// plus shapes. The renderer z-buffers all covering surfaces per pixel; the
// minimum depth wins, background included.
struct SceneDescription {
  double bg_base = 1, bg_gx = 0, bg_gy = 0;  // depth about the image center
  double bg_color[3] = {0.5, 0.5, 0.5};
  double bg_freq_x = 0, bg_freq_y = 0, bg_phase = 0;
  std::vector<SceneShape> shapes;
};

// Draws the layout for (cfg, seed): shape count uniform in the configured
// range, classes uniform over [1, K), depth planes kept inside
// [depth_near, depth_far] by construction.
SceneDescription describe_scene(const SceneConfig& cfg, uint64_t seed);

double background_depth_at(const SceneDescription& desc, const SceneConfig& cfg, int x, int y);
bool shape_covers(const SceneShape& s, int x, int y);
double shape_depth_at(const SceneShape& s, int x, int y);

// Deterministic render of a layout; the noise stream is seeded from the same
// sample seed, so the same (cfg, seed) always produces bitwise-identical
// samples.
Sample render_scene(const SceneConfig& cfg, const SceneDescription& desc, uint64_t seed);

// describe + render in one step.
Sample generate_scene(const SceneConfig& cfg, uint64_t seed);

// n = normalize(-dd/dx, -dd/dy, 1) with clamped central differences divided by
// the true index span, so a linear ramp yields its exact analytic normal
// everywhere. Accepts [H, W] or [1, H, W]; returns [3, H, W].
TensorF derive_normals(const TensorF& depth);

// Binary boundary map: a pixel is an edge iff any 4-neighbor has a different
// label. Accepts [H, W]; returns [H, W] of 0/1.
TensorF derive_edges(const IntTensor& seg);

// ---------------------------------------------------------------------------
// tensor container
// ---------------------------------------------------------------------------
struct ArchiveEntry {
  std::string name;
  std::variant<TensorF, IntTensor> value;
};

// Serialized record: "BTNR", version byte 1, dtype byte (1 = f32, 2 = i32),
// rank byte, dims as u32 little-endian, payload little-endian row-major.
void save_archive(const std::string& path, const std::vector<ArchiveEntry>& entries);

// Throws FormatError on corrupt magic/version/dtype, truncation, or duplicate
// names; IoError if the file cannot be opened.
std::vector<ArchiveEntry> load_archive(const std::string& path);

// In-memory forms used by both the file API and the tests.
std::vector<uint8_t> serialize_archive(const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> deserialize_archive(const std::vector<uint8_t>& bytes);

// Sample <-> archive: entries image, seg, depth, normals, edges, depth_mask,
// normals_mask, in that order.
std::vector<ArchiveEntry> sample_to_entries(const Sample& s);
Sample sample_from_entries(const std::vector<ArchiveEntry>& entries);

// ---------------------------------------------------------------------------
// dataset builder
// ---------------------------------------------------------------------------
// Writes train_NNNN.btnr / val_NNNN.btnr archives under out_dir plus a
// manifest of tab-separated `split<TAB>path<TAB>seed` lines (paths relative to
// out_dir). Sample i of a split uses seed cfg.seed + i (train) or
// cfg.seed + 1'000'000 + i (val). Returns the manifest path.
std::string build_dataset(const SceneConfig& cfg, int n_train, int n_val,
                          const std::string& out_dir);

struct ManifestRow {
  std::string split;
  std::string path;  // resolved: out_dir / relative path
  uint64_t seed = 0;
};

std::vector<ManifestRow> read_manifest(const std::string& manifest_path);

}  // namespace bridgenet
