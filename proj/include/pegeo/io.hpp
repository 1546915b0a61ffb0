#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pegeo/grid.hpp"

namespace pegeo::io {

// Binary tensor container: magic "PGT1", one-line JSON header {"dims":[...],
// "dtype":"f32"|"f64","order":"little"}, newline, then raw row-major little-endian data.
struct Tensor {
    std::vector<std::int64_t> dims;
    std::string dtype = "f64";        // "f32" or "f64"
    std::vector<double> f64;          // filled when dtype == "f64"
    std::vector<float> f32;           // filled when dtype == "f32"

    std::size_t element_count() const;
};

void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

Tensor tensor_from_matrix(const Matrix& m);
Matrix matrix_from_tensor(const Tensor& t);

// Row-major CSV with full round-trip precision, one matrix row per line.
void write_csv_matrix(const std::string& path, const Matrix& m);

// Images persist as a PGT1 tensor (height×width×channels) plus a JSON sidecar
// "<path>.json" describing size, channels, and provenance fields.
void write_image(const std::string& path, const Image& img, const std::string& sidecar_json);
Image read_image(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace pegeo::io
