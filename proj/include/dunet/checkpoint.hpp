#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dunet/graph.hpp"

// SGW1 parameter checkpoints, all integers little-endian:
//
//   "SGW1"                       4-byte magic
//   u32 count
//   count x {
//     u32 name_length
//     name_length bytes of UTF-8 name
//     u32 extents[4]             n, c, h, w
//     f32 data[n*c*h*w]          IEEE-754 little-endian
//   }

namespace dunet {

class CheckpointError : public Error {
   public:
    using Error::Error;
};

struct NamedTensor {
    std::string name;
    Tensor value;
    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& params);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Parameters of `g` in graph order, converted to f32.
template <typename T>
std::vector<NamedTensor> snapshot_parameters(const BasicGraph<T>& g);

/// Loads every parameter of `g` from `params` by name. Throws CheckpointError
/// listing every missing or shape-mismatched parameter.
template <typename T>
void restore_parameters(BasicGraph<T>& g, const std::vector<NamedTensor>& params);

}  // namespace dunet
