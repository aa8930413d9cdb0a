#include "crepe/embed/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "crepe/errors.hpp"
#include "crepe/geometry.hpp"

namespace crepe::embed {

PixelRect crop_rect(const Image& image, const data::BoundingBox& box) {
  PixelRect r;
  r.x0 = std::clamp(static_cast<int>(std::floor(box.x)), 0, image.width);
  r.y0 = std::clamp(static_cast<int>(std::floor(box.y)), 0, image.height);
  r.x1 = std::clamp(static_cast<int>(std::ceil(box.x + box.w)), 0, image.width);
  r.y1 = std::clamp(static_cast<int>(std::ceil(box.y + box.h)), 0, image.height);
  if (!(box.w >= 1.0) || !(box.h >= 1.0) || r.width() < 1 || r.height() < 1) {
    throw ArgumentError("degenerate crop: region must cover at least one pixel");
  }
  return r;
}

Vec grid_pool(const Image& image, const data::BoundingBox& box, int grid) {
  if (grid < 1) {
    throw ArgumentError("grid size must be positive");
  }
  const PixelRect r = crop_rect(image, box);
  const int C = image.channels;
  Vec out = Vec::Zero(static_cast<Eigen::Index>(grid) * grid * C);
  auto span_of = [](int origin, int extent, int g, int cells) {
    int a = origin + (g * extent) / cells;
    int b = origin + ((g + 1) * extent) / cells;
    if (b <= a) b = a + 1;  // crops narrower than the grid repeat pixels
    return std::pair{a, std::min(b, origin + extent)};
  };
  for (int gy = 0; gy < grid; ++gy) {
    const auto [ya, yb] = span_of(r.y0, r.height(), gy, grid);
    for (int gx = 0; gx < grid; ++gx) {
      const auto [xa, xb] = span_of(r.x0, r.width(), gx, grid);
      const Eigen::Index base = (static_cast<Eigen::Index>(gy) * grid + gx) * C;
      for (int y = ya; y < yb; ++y) {
        for (int x = xa; x < xb; ++x) {
          for (int c = 0; c < C; ++c) out(base + c) += image.at(x, y, c);
        }
      }
      const double n = static_cast<double>(yb - ya) * (xb - xa);
      out.segment(base, C) /= n;
    }
  }
  return out;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw BackendError("cannot open image " + path.string());
  }
  std::string magic;
  int w = 0;
  int h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw FormatError(path.string() + ": only 8-bit binary PPM (P6) is supported");
  }
  Image img(w, h, 3);
  std::vector<unsigned char> raw(std::size_t(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / float(maxval);
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3) {
    throw ArgumentError("PPM output needs 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.data) {
    out.put(static_cast<char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)));
  }
}

Image PpmDirectorySource::load(const data::Scene& scene) const {
  return read_ppm(dir_ / (scene.image_id + ".ppm"));
}

Image SyntheticImageSource::load(const data::Scene& scene) const {
  const int W = static_cast<int>(std::ceil(scene.width));
  const int H = static_cast<int>(std::ceil(scene.height));
  const int C = static_cast<int>(planted_.dim);
  Image img(W, H, C);
  std::mt19937_64 rng(data::mix_seed(config_.seed, scene.image_id));
  std::normal_distribution<double> normal(0.0, 1.0);

  for (auto& v : img.data) v = static_cast<float>(config_.background_noise * normal(rng));

  auto paint = [&](const data::BoundingBox& box, const Vec& color) {
    const PixelRect r = crop_rect(img, box);
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = 0; c < C; ++c) {
          img.at(x, y, c) = static_cast<float>(color(c) + config_.pixel_noise * normal(rng));
        }
      }
    }
  };

  for (const auto& rel : scene.relations) {
    const auto& s = scene.entities[rel.subject_idx].box;
    const auto& o = scene.entities[rel.object_idx].box;
    const Vec offset =
        config_.predicate_strength *
        planted_.predicate_offsets.row(static_cast<Eigen::Index>(rel.predicate_id)).transpose();
    paint(geometry::union_box(s, o), offset);
  }
  for (const auto& e : scene.entities) {
    Vec color = planted_.object_vectors.row(static_cast<Eigen::Index>(e.label_id)).transpose();
    for (Eigen::Index c = 0; c < color.size(); ++c) {
      color(c) += config_.instance_noise * normal(rng) / std::sqrt(static_cast<double>(C));
    }
    paint(e.box, color);
  }
  return img;
}

}  // namespace crepe::embed
