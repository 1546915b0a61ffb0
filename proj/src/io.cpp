#include "pegeo/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pegeo::io {

namespace {

using nlohmann::json;

void check_little_endian_host() {
    const std::uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw std::runtime_error("tensor io requires a little-endian host");
}

}  // namespace

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (const auto d : dims) {
        if (d < 0) throw std::invalid_argument("tensor dims must be non-negative");
        n *= static_cast<std::size_t>(d);
    }
    return dims.empty() ? 0 : n;
}

void write_tensor(const std::string& path, const Tensor& t) {
    check_little_endian_host();
    if (t.dtype != "f32" && t.dtype != "f64")
        throw std::invalid_argument("tensor dtype must be f32 or f64");
    const std::size_t n = t.element_count();
    if ((t.dtype == "f64" && t.f64.size() != n) || (t.dtype == "f32" && t.f32.size() != n))
        throw std::invalid_argument("tensor data size does not match dims");

    json header;
    header["dims"] = t.dims;
    header["dtype"] = t.dtype;
    header["order"] = "little";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write("PGT1", 4);
    const std::string h = header.dump();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.put('\n');
    if (t.dtype == "f64")
        out.write(reinterpret_cast<const char*>(t.f64.data()),
                  static_cast<std::streamsize>(n * sizeof(double)));
    else
        out.write(reinterpret_cast<const char*>(t.f32.data()),
                  static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) throw std::runtime_error("short write: " + path);
}

Tensor read_tensor(const std::string& path) {
    check_little_endian_host();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PGT1", 4) != 0)
        throw std::runtime_error("bad tensor magic in " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("missing tensor header: " + path);
    json header = json::parse(header_line);
    Tensor t;
    t.dims = header.at("dims").get<std::vector<std::int64_t>>();
    t.dtype = header.at("dtype").get<std::string>();
    if (header.at("order").get<std::string>() != "little")
        throw std::runtime_error("unsupported byte order in " + path);
    if (t.dtype != "f32" && t.dtype != "f64")
        throw std::runtime_error("unsupported dtype in " + path);
    const std::size_t n = t.element_count();
    if (t.dtype == "f64") {
        t.f64.resize(n);
        in.read(reinterpret_cast<char*>(t.f64.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        t.f32.resize(n);
        in.read(reinterpret_cast<char*>(t.f32.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
    }
    if (!in) throw std::runtime_error("short read: " + path);
    return t;
}

Tensor tensor_from_matrix(const Matrix& m) {
    Tensor t;
    t.dims = {m.rows, m.cols};
    t.dtype = "f64";
    t.f64 = m.a;
    return t;
}

Matrix matrix_from_tensor(const Tensor& t) {
    if (t.dims.size() != 2) throw std::invalid_argument("tensor is not a matrix");
    if (t.dtype != "f64") throw std::invalid_argument("matrix tensors use dtype f64");
    Matrix m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
    m.a = t.f64;
    return m;
}

void write_csv_matrix(const std::string& path, const Matrix& m) {
    std::ostringstream out;
    out.precision(17);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (c) out << ',';
            out << m.at(r, c);
        }
        out << '\n';
    }
    write_file(path, out.str());
}

void write_image(const std::string& path, const Image& img, const std::string& sidecar_json) {
    Tensor t;
    t.dims = {img.height, img.width, img.channels};
    t.dtype = "f64";
    t.f64 = img.v;
    write_tensor(path, t);
    write_file(path + ".json", sidecar_json);
}

Image read_image(const std::string& path) {
    Tensor t = read_tensor(path);
    if (t.dims.size() != 3) throw std::runtime_error("image tensor must be rank 3: " + path);
    Image img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
              static_cast<int>(t.dims[2]));
    img.v = t.f64;
    return img;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace pegeo::io
