// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// IDX reader/writer. Layout: two zero bytes, a type code (0x08 = unsigned
// byte), the number of dimensions, one big-endian uint32 per dimension, then
// the row-major payload.

#include <algorithm>
#include <fstream>
#include <iterator>

#include "efobda/errors.hpp"
#include "efobda/learning.hpp"

namespace efobda {
namespace {

constexpr unsigned char kUnsignedByte = 0x08;

std::uint32_t read_be32(std::span<const unsigned char> bytes,
                        std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) |
         std::uint32_t{bytes[offset + 3]};
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open IDX file '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxTensor parse_idx(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4) {
    throw ParseError("IDX header truncated", bytes.size());
  }
  if (bytes[0] != 0 || bytes[1] != 0) {
    throw ParseError("IDX magic number must start with two zero bytes", 0);
  }
  if (bytes[2] != kUnsignedByte) {
    throw ParseError("unsupported IDX element type (only 0x08 is accepted)",
                     2);
  }
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw ParseError("IDX tensor has zero dimensions", 3);

  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw ParseError("IDX dimension table truncated", bytes.size());
  }
  IdxTensor out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t n = read_be32(bytes, 4 + 4 * d);
    out.dims.push_back(n);
    if (n != 0 && count > (bytes.size() - header) / n + 1) {
      // Larger than anything the buffer could hold; also avoids overflow.
      throw ParseError("IDX payload truncated: dimensions exceed file size",
                       bytes.size());
    }
    count *= n;
  }
  if (bytes.size() - header < count) {
    throw ParseError("IDX payload truncated: expected " +
                         std::to_string(count) + " bytes",
                     bytes.size());
  }
  if (bytes.size() - header > count) {
    throw ParseError("IDX payload has trailing bytes", header + count);
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                  bytes.end());
  return out;
}

IdxTensor read_idx(const std::string& path) {
  const std::vector<unsigned char> bytes = slurp(path);
  return parse_idx(bytes);
}

std::vector<unsigned char> encode_idx(const IdxTensor& tensor) {
  if (tensor.dims.empty() || tensor.dims.size() > 255) {
    throw InvalidInput("encode_idx: rank must lie in [1, 255]");
  }
  std::size_t count = 1;
  for (std::size_t n : tensor.dims) count *= n;
  if (count != tensor.data.size()) {
    throw InvalidInput("encode_idx: payload size does not match dims");
  }
  std::vector<unsigned char> out{0, 0, kUnsignedByte,
                                 static_cast<unsigned char>(tensor.dims.size())};
  for (std::size_t n : tensor.dims) {
    const auto v = static_cast<std::uint32_t>(n);
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
  }
  out.insert(out.end(), tensor.data.begin(), tensor.data.end());
  return out;
}

void write_idx(const std::string& path, const IdxTensor& tensor) {
  const std::vector<unsigned char> bytes = encode_idx(tensor);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write IDX file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Dataset load_idx_subset(const std::string& images_path,
                        const std::string& labels_path,
                        const std::vector<int>& classes,
                        std::size_t per_class) {
  if (classes.empty()) throw InvalidInput("load_idx_subset: no classes");
  const IdxTensor images = read_idx(images_path);
  const IdxTensor labels = read_idx(labels_path);
  if (images.dims.size() != 3) {
    throw ParseError("image file must hold a 3-D tensor (magic 0x00000803)",
                     3);
  }
  if (labels.dims.size() != 1) {
    throw ParseError("label file must hold a 1-D tensor (magic 0x00000801)",
                     3);
  }
  if (images.dims[0] != labels.dims[0]) {
    throw InvalidInput("load_idx_subset: image and label counts differ");
  }
  const std::size_t pixels = images.dims[1] * images.dims[2];

  Dataset out;
  out.feature_dim = pixels;
  std::vector<std::size_t> taken(classes.size(), 0);
  std::vector<double> x(pixels);
  for (std::size_t s = 0; s < labels.dims[0]; ++s) {
    const auto it = std::find(classes.begin(), classes.end(),
                              static_cast<int>(labels.data[s]));
    if (it == classes.end()) continue;
    const auto c = static_cast<std::size_t>(it - classes.begin());
    if (taken[c] == per_class) continue;
    ++taken[c];
    const unsigned char* px = images.data.data() + s * pixels;
    for (std::size_t i = 0; i < pixels; ++i) x[i] = px[i] / 255.0;
    out.push_back(x, static_cast<int>(c));
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (taken[c] < per_class) {
      throw InvalidInput("load_idx_subset: class " +
                         std::to_string(classes[c]) + " has only " +
                         std::to_string(taken[c]) + " samples");
    }
  }
  return out;
}

}  // namespace efobda
