// Writes the frozen tiny64 reference output used by the graph tests:
// synthesize(tiny64, seed 0, scaled_fan_in), z = 0, class 0, as raw
// little-endian float32 [3, 64, 64].

#include <bit>
#include <cstdio>
#include <string>

#include "weightscape/weightscape.hpp"

int main(int argc, char** argv) {
  using namespace weightscape;
  if (argc != 2) {
    std::fprintf(stderr, "usage: record_golden <out.f32>\n");
    return 1;
  }
  const GeneratorGraph graph(tiny64_config());
  const Checkpoint ckpt = synthesize(graph.config(), 0, InitScheme::scaled_fan_in);
  const Tensor image = forward(graph, ckpt, Tensor({graph.config().latent_dim}), 0);
  std::string bytes;
  for (float v : image.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  write_file(argv[1], bytes);
  std::printf("wrote %zu values to %s\n", image.size(), argv[1]);
  return 0;
}
