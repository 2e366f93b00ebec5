#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "toyfashion/tensor.hpp"

namespace toyfashion {

// Named-array container ("TFAR0001"): the on-disk unit for samples and
// checkpoints. Arrays are little-endian; doubles are stored raw so
// round-trips are exact.
struct NamedArrays {
    std::map<std::string, Tensor> tensors;             // f64 payloads
    std::map<std::string, std::vector<int64_t>> ints;  // i64 payloads (token ids, flags)
    std::map<std::string, std::string> texts;          // utf8 payloads (metadata records)

    bool has(const std::string& name) const {
        return tensors.count(name) || ints.count(name) || texts.count(name);
    }
};

std::vector<uint8_t> encode_arrays(const NamedArrays& a);
NamedArrays decode_arrays(const uint8_t* data, size_t n);
NamedArrays decode_arrays(const std::vector<uint8_t>& bytes);

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file_bytes(const std::string& path);

// binary PPM (P6) / PGM (P5); values clamped from [0,1] to 8-bit
void write_ppm(const std::string& path, const Tensor& rgb);   // [3,H,W]
void write_pgm(const std::string& path, const Tensor& gray);  // [1,H,W] or [H,W]
Tensor read_ppm(const std::string& path);                     // -> [3,H,W] in [0,1]

}  // namespace toyfashion
