#include "pat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "pat/error.hpp"
#include "pat/rng.hpp"

namespace pat {

namespace fs = std::filesystem;

void write_netpbm(const std::string& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw DataError("netpbm supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << (r.channels == 3 ? "P6" : "P5") << '\n' << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels.data()),
            static_cast<std::streamsize>(r.pixels.size()));
}

Raster read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    if (t.empty()) throw DataError("truncated netpbm header in '" + path + "'");
    return t;
  };
  Raster r;
  const std::string magic = token();
  if (magic == "P6") r.channels = 3;
  else if (magic == "P5") r.channels = 1;
  else throw DataError("'" + path + "' is not a binary PPM/PGM file");
  try {
    r.width = std::stoul(token());
    r.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw DataError("'" + path + "' is not 8-bit");
  } catch (const std::logic_error&) {
    throw DataError("malformed netpbm header in '" + path + "'");
  }
  r.pixels.resize(r.width * r.height * r.channels);
  in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.pixels.size())) {
    throw DataError("truncated pixel data in '" + path + "'");
  }
  return r;
}

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

std::vector<std::string> synthetic_class_names(std::size_t num_classes) {
  std::vector<std::string> names{"background"};
  for (std::size_t k = 1; k < num_classes; ++k) names.push_back("shape" + std::to_string(k));
  return names;
}

SyntheticSample render_sample(std::size_t size, std::size_t num_classes, std::uint64_t seed,
                              std::size_t index) {
  if (size == 0 || size % 8 != 0) {
    throw ConfigError("image size " + std::to_string(size) + " is not divisible by 8");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  Rng rng(Rng::derive_seed(seed, index));
  const std::size_t n = size * size;
  std::vector<double> rgb(3 * n);
  SyntheticSample out;
  out.label = {size, size, 1, std::vector<std::uint8_t>(n, 0)};

  // Background: low-saturation base colour, faint stripes and pixel noise.
  double base[3];
  hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0, 0.12), rng.uniform(0.35, 0.6), base);
  const double freq = rng.uniform(0.15, 0.5);
  const double angle = rng.uniform(0, std::numbers::pi);
  const double amp = rng.uniform(0.01, 0.04);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y));
      for (int c = 0; c < 3; ++c) {
        rgb[(y * size + x) * 3 + c] = base[c] + amp * t + rng.uniform(-0.02, 0.02);
      }
    }

  const double band = 360.0 / static_cast<double>(num_classes - 1);
  const std::size_t shapes = rng.index(4);
  const double s = static_cast<double>(size);
  for (std::size_t k = 0; k < shapes; ++k) {
    const std::size_t cls = 1 + rng.index(num_classes - 1);
    const double hue = band * (static_cast<double>(cls) - 1.0) + rng.uniform(-0.2, 0.2) * band;
    double colour[3];
    hsv_to_rgb(hue, rng.uniform(0.65, 1.0), rng.uniform(0.7, 1.0), colour);
    const std::size_t kind = rng.index(3);
    const double extent = rng.uniform(0.2, 0.45) * s;
    const double cx = rng.uniform(0.15, 0.85) * s;
    const double cy = rng.uniform(0.15, 0.85) * s;
    const double aspect = rng.uniform(0.6, 1.4);
    const double hx = 0.5 * extent * aspect, hy = 0.5 * extent / aspect;
    // Triangle vertices around the centre.
    const double rot = rng.uniform(0, 2 * std::numbers::pi);
    double tx[3], ty[3];
    for (int v = 0; v < 3; ++v) {
      const double a = rot + v * 2.0 * std::numbers::pi / 3.0;
      tx[v] = cx + 0.6 * extent * std::cos(a);
      ty[v] = cy + 0.6 * extent * std::sin(a);
    }
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        bool inside = false;
        if (kind == 0) {
          inside = std::fabs(px - cx) <= hx && std::fabs(py - cy) <= hy;
        } else if (kind == 1) {
          const double dx = (px - cx) / hx, dy = (py - cy) / hy;
          inside = dx * dx + dy * dy <= 1.0;
        } else {
          const double e0 = edge(tx[0], ty[0], tx[1], ty[1], px, py);
          const double e1 = edge(tx[1], ty[1], tx[2], ty[2], px, py);
          const double e2 = edge(tx[2], ty[2], tx[0], ty[0], px, py);
          inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) rgb[(y * size + x) * 3 + c] = colour[c];
        out.label.pixels[y * size + x] = static_cast<std::uint8_t>(cls);
      }
  }
  out.image = {size, size, 3, std::vector<std::uint8_t>(3 * n)};
  for (std::size_t i = 0; i < 3 * n; ++i) out.image.pixels[i] = to_byte(rgb[i]);
  return out;
}

Manifest gen_dataset(const std::string& directory, std::size_t count, std::size_t size,
                     std::size_t num_classes, std::uint64_t seed) {
  if (size == 0 || size % 8 != 0) {
    throw ConfigError("image size " + std::to_string(size) + " is not divisible by 8");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_classes > 255) throw ConfigError("num_classes must fit an 8-bit label map");
  fs::create_directories(fs::path(directory) / "images");
  fs::create_directories(fs::path(directory) / "labels");
  Manifest m;
  m.directory = directory;
  const auto names = synthetic_class_names(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) m.classes.push_back({k, names[k]});
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    const auto sample = render_sample(size, num_classes, seed, i);
    SampleEntry e{id, std::string("images/") + id + ".ppm", std::string("labels/") + id + ".pgm", ""};
    write_netpbm(m.resolve(e.image), sample.image);
    write_netpbm(m.resolve(e.label), sample.label);
    m.samples.push_back(std::move(e));
  }
  write_manifest((fs::path(directory) / "manifest.tsv").string(), m);
  return m;
}

Tensor raster_to_tensor(const Raster& r) {
  const std::size_t n = r.width * r.height;
  std::vector<double> values(r.channels * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < r.channels; ++c) {
      values[c * n + p] = static_cast<double>(r.pixels[p * r.channels + c]) / 255.0;
    }
  return Tensor::from_vector({r.channels, r.height, r.width}, std::move(values));
}

Raster tensor_to_raster(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("expected [C x H x W], got " + shape_str(image.shape()));
  Raster r{image.size(2), image.size(1), image.size(0), {}};
  const std::size_t n = r.width * r.height;
  r.pixels.resize(r.channels * n);
  const auto v = image.values();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < r.channels; ++c) r.pixels[p * r.channels + c] = to_byte(v[c * n + p]);
  return r;
}

Sample load_sample(const Manifest& manifest, std::size_t index) {
  const auto& e = manifest.samples.at(index);
  Sample s;
  s.id = e.id;
  const Raster img = read_netpbm(manifest.resolve(e.image));
  if (img.channels != 3) throw DataError("image '" + e.image + "' is not RGB");
  const Raster lab = read_netpbm(manifest.resolve(e.label));
  if (lab.channels != 1 || lab.width != img.width || lab.height != img.height) {
    throw DataError("label map '" + e.label + "' does not match its image");
  }
  s.image = raster_to_tensor(img);
  s.labels.assign(lab.pixels.begin(), lab.pixels.end());
  for (auto l : s.labels) {
    if (l != 255 && l >= manifest.classes.size()) {
      throw DataError("label map '" + e.label + "' uses id " + std::to_string(l) +
                      " outside the class table");
    }
  }
  if (!e.feature.empty()) s.feature_path = manifest.resolve(e.feature);
  return s;
}

}  // namespace pat
