#pragma once

#include <filesystem>
#include <memory>

#include "crepe/data/scene.hpp"
#include "crepe/data/synthetic.hpp"
#include "crepe/embed/embedding.hpp"

namespace crepe::embed {

// Integer pixel bounds of a box crop: [x0, x1) x [y0, y1), clipped to the image.
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

// Throws ArgumentError when fewer than one pixel survives.
PixelRect crop_rect(const Image& image, const data::BoundingBox& box);

// Area-averages the crop onto a grid x grid lattice; returns grid*grid*C
// values, cell-major then channel.
Vec grid_pool(const Image& image, const data::BoundingBox& box, int grid);

// Binary PPM (P6) reader; channels scaled to [0, 1].
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image load(const data::Scene& scene) const = 0;
};

// "<dir>/<image_id>.ppm".
class PpmDirectorySource : public ImageSource {
 public:
  explicit PpmDirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  Image load(const data::Scene& scene) const override;

 private:
  std::filesystem::path dir_;
};

struct RenderConfig {
  double background_noise = 0.3;   // per-pixel noise outside every box
  double pixel_noise = 0.1;        // per-pixel noise inside boxes
  double instance_noise = 0.5;     // per-entity appearance deviation from its class
  double predicate_strength = 1.0; // amplitude of the interaction pattern
  std::uint64_t seed = 0;
};

// Renders synthetic scenes from their planted structure: channel c of the
// raster is coordinate c of the planted space. Union boxes of related pairs
// carry the predicate offset; entity boxes carry their class vector plus a
// per-instance deviation. Deterministic per (seed, image_id).
class SyntheticImageSource : public ImageSource {
 public:
  SyntheticImageSource(data::PlantedStructure planted, RenderConfig config)
      : planted_(std::move(planted)), config_(config) {}
  Image load(const data::Scene& scene) const override;

  const data::PlantedStructure& planted() const { return planted_; }
  const RenderConfig& config() const { return config_; }

 private:
  data::PlantedStructure planted_;
  RenderConfig config_;
};

}  // namespace crepe::embed
