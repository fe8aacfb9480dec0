#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "weightscape/checkpoint.hpp"
#include "weightscape/graph.hpp"
#include "weightscape/parallel.hpp"
#include "weightscape/png.hpp"
#include "weightscape/random.hpp"

namespace weightscape {

/// Latent vectors offset .. offset+count-1 of the standard-normal stream for
/// `seed`. Latent i always occupies elements [i*dim, (i+1)*dim) of the
/// stream, so a longer request extends a shorter one.
inline std::vector<Tensor> sample_latents(std::uint64_t seed, std::size_t count,
                                          std::size_t latent_dim, std::size_t offset = 0) {
  if (count == 0) throw Error("latent count must be >= 1");
  const SeedStream stream(seed, "latent");
  std::vector<Tensor> latents;
  latents.reserve(count);
  for (std::size_t i = offset; i < offset + count; ++i) {
    Tensor z({latent_dim});
    for (std::size_t j = 0; j < latent_dim; ++j) {
      z[j] = static_cast<float>(stream.normal(i * latent_dim + j, DrawPurpose::latent));
    }
    latents.push_back(std::move(z));
  }
  return latents;
}

/// [-1, 1] -> [0, 255], clamped, rounding half away from zero.
inline std::uint8_t to_pixel(float value) {
  const double v = std::clamp(static_cast<double>(value), -1.0, 1.0);
  return static_cast<std::uint8_t>(std::round((v + 1.0) * 127.5));
}

inline float from_pixel(std::uint8_t pixel) {
  return static_cast<float>(pixel / 127.5 - 1.0);
}

/// CHW image [3, H, W] -> interleaved RGB bytes, row-major.
inline std::vector<std::uint8_t> to_pixels(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("to_pixels expects [3, H, W], got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) rgb[i * 3 + c] = to_pixel(image[c * h * w + i]);
  }
  return rgb;
}

struct CheckpointDescriptor {
  std::string label;
  std::shared_ptr<const Checkpoint> checkpoint;
};

/// Rows are class-major: for each class in order, one row per latent.
/// Columns are the variants in order (by convention the base comes last).
struct RenderRequest {
  std::uint64_t latent_seed = 0;
  std::size_t latent_count = 1;
  std::size_t latent_offset = 0;
  std::vector<std::size_t> classes;
  std::vector<CheckpointDescriptor> variants;
};

/// The exact generator input shared by every tile of one grid row.
struct RowInput {
  std::size_t class_index = 0;
  std::size_t latent_index = 0;
  Tensor z;
};

struct ImageGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t tile = 0;                // R
  std::vector<RowInput> row_inputs;    // one per row
  std::vector<Tensor> tiles;           // rows * cols, row-major
  std::vector<std::uint8_t> pixels;    // RGB, (rows*R) x (cols*R)

  std::size_t width() const { return cols * tile; }
  std::size_t height() const { return rows * tile; }
  const Tensor& tile_at(std::size_t r, std::size_t c) const { return tiles.at(r * cols + c); }
};

inline std::vector<RowInput> row_inputs(const RenderRequest& request, std::size_t latent_dim) {
  const auto latents = sample_latents(request.latent_seed, request.latent_count, latent_dim,
                                      request.latent_offset);
  std::vector<RowInput> rows;
  for (std::size_t c : request.classes) {
    for (std::size_t i = 0; i < latents.size(); ++i) {
      rows.push_back({c, request.latent_offset + i, latents[i]});
    }
  }
  return rows;
}

/// Renders every (row, variant) tile and composes the grid. Tiles render in
/// parallel; composition is sequential, so the result is independent of the
/// thread count.
inline ImageGrid render_grid(const RenderRequest& request, const GeneratorGraph& graph) {
  if (request.classes.empty()) throw Error("render request needs at least one class");
  if (request.variants.empty()) throw Error("render request needs at least one variant");
  for (const auto& v : request.variants) {
    if (!v.checkpoint) throw Error("variant '" + v.label + "' has no checkpoint");
    const auto problems = manifest_mismatches(graph.manifest(), *v.checkpoint);
    if (!problems.empty()) {
      throw ManifestError("variant '" + v.label + "' does not match the graph: " +
                          problems.front() +
                          (problems.size() > 1 ? " (+" + std::to_string(problems.size() - 1) + " more)" : ""));
    }
  }
  ImageGrid grid;
  grid.row_inputs = row_inputs(request, graph.config().latent_dim);
  grid.rows = grid.row_inputs.size();
  grid.cols = request.variants.size();
  grid.tile = graph.output_resolution();
  grid.tiles.resize(grid.rows * grid.cols);
  parallel_for(grid.tiles.size(), [&](std::size_t t) {
    const RowInput& in = grid.row_inputs[t / grid.cols];
    grid.tiles[t] = forward(graph, *request.variants[t % grid.cols].checkpoint, in.z, in.class_index);
  });

  const std::size_t r = grid.tile;
  const std::size_t width = grid.width();
  grid.pixels.assign(grid.height() * width * 3, 0);
  for (std::size_t row = 0; row < grid.rows; ++row) {
    for (std::size_t col = 0; col < grid.cols; ++col) {
      const auto tile = to_pixels(grid.tile_at(row, col));
      for (std::size_t y = 0; y < r; ++y) {
        std::copy_n(tile.begin() + y * r * 3, r * 3,
                    grid.pixels.begin() + ((row * r + y) * width + col * r) * 3);
      }
    }
  }
  return grid;
}

inline std::string encode_grid_png(const ImageGrid& grid) {
  return encode_png(grid.width(), grid.height(), grid.pixels);
}

inline std::string encode_tile_png(const ImageGrid& grid, std::size_t row, std::size_t col) {
  const Tensor& tile = grid.tile_at(row, col);
  return encode_png(tile.dim(2), tile.dim(1), to_pixels(tile));
}

/// Everything needed to regenerate the grid from the same inputs.
inline nlohmann::json grid_provenance(const RenderRequest& request, const GeneratorGraph& graph) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : request.variants) {
    variants.push_back({{"label", v.label}, {"provenance", v.checkpoint->provenance()}});
  }
  const std::size_t rows = request.classes.size() * request.latent_count;
  return {
      {"graph", graph.config().name},
      {"graph_config", config_to_json(graph.config())},
      {"latent_seed", request.latent_seed},
      {"latent_count", request.latent_count},
      {"latent_offset", request.latent_offset},
      {"latent_distribution", "standard_normal"},
      {"classes", request.classes},
      {"rows", rows},
      {"cols", request.variants.size()},
      {"tile", graph.output_resolution()},
      {"variants", variants},
  };
}

struct RenderedGrid {
  ImageGrid grid;
  std::string png;
  nlohmann::json provenance;
};

inline RenderedGrid render(const RenderRequest& request, const GeneratorGraph& graph) {
  RenderedGrid out;
  out.grid = render_grid(request, graph);
  out.png = encode_grid_png(out.grid);
  out.provenance = grid_provenance(request, graph);
  return out;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

/// Sidecar provenance lives next to the image as <image>.json.
inline std::filesystem::path sidecar_path(const std::filesystem::path& image) {
  return image.string() + ".json";
}

inline void write_rendered(const RenderedGrid& rendered, const std::filesystem::path& path) {
  write_file(path, rendered.png);
  write_file(sidecar_path(path), rendered.provenance.dump(2) + "\n");
}

}  // namespace weightscape
