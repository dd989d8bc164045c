#include "cfan/container.hpp"

#include <cstring>
#include <fstream>

#include "cfan/exceptions.hpp"

namespace cfan {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw ParseError("container: truncated file");
    return value;
}

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
    std::uint64_t count = 1;
    for (auto d : dims) count *= d;
    return count;
}

}  // namespace

void Container::put_f64(const std::string& name, std::vector<std::uint64_t> dims,
                        std::vector<double> data) {
    if (element_count(dims) != data.size()) throw ShapeMismatch("container: dims do not match payload");
    Chunk chunk;
    chunk.type = Type::Float64;
    chunk.dims = std::move(dims);
    chunk.f64 = std::move(data);
    chunks_[name] = std::move(chunk);
}

void Container::put_i64(const std::string& name, std::vector<std::uint64_t> dims,
                        std::vector<std::int64_t> data) {
    if (element_count(dims) != data.size()) throw ShapeMismatch("container: dims do not match payload");
    Chunk chunk;
    chunk.type = Type::Int64;
    chunk.dims = std::move(dims);
    chunk.i64 = std::move(data);
    chunks_[name] = std::move(chunk);
}

void Container::put_text(const std::string& name, std::string text) {
    Chunk chunk;
    chunk.type = Type::Bytes;
    chunk.dims = {static_cast<std::uint64_t>(text.size())};
    chunk.bytes = std::move(text);
    chunks_[name] = std::move(chunk);
}

void Container::put_scalar(const std::string& name, double value) { put_f64(name, {1}, {value}); }

void Container::put_scalar_i64(const std::string& name, std::int64_t value) { put_i64(name, {1}, {value}); }

void Container::put_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        }
    }
    put_f64(name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
            std::move(data));
}

void Container::put_vector(const std::string& name, const Eigen::VectorXd& v) {
    put_f64(name, {static_cast<std::uint64_t>(v.size())},
            std::vector<double>(v.data(), v.data() + v.size()));
}

const Container::Chunk& Container::get(const std::string& name) const {
    const auto it = chunks_.find(name);
    if (it == chunks_.end()) throw ParseError("container: missing chunk " + name);
    return it->second;
}

double Container::get_scalar(const std::string& name) const {
    const auto& chunk = get(name);
    if (chunk.type != Type::Float64 || chunk.f64.size() != 1) {
        throw ShapeMismatch("container: " + name + " is not a scalar");
    }
    return chunk.f64[0];
}

std::int64_t Container::get_scalar_i64(const std::string& name) const {
    const auto& chunk = get(name);
    if (chunk.type != Type::Int64 || chunk.i64.size() != 1) {
        throw ShapeMismatch("container: " + name + " is not an int scalar");
    }
    return chunk.i64[0];
}

const std::string& Container::get_text(const std::string& name) const {
    const auto& chunk = get(name);
    if (chunk.type != Type::Bytes) throw ShapeMismatch("container: " + name + " is not text");
    return chunk.bytes;
}

Eigen::MatrixXd Container::get_matrix(const std::string& name) const {
    const auto& chunk = get(name);
    if (chunk.type != Type::Float64 || chunk.dims.size() != 2) {
        throw ShapeMismatch("container: " + name + " is not a matrix");
    }
    const auto rows = static_cast<Eigen::Index>(chunk.dims[0]);
    const auto cols = static_cast<Eigen::Index>(chunk.dims[1]);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = chunk.f64[static_cast<std::size_t>(r * cols + c)];
        }
    }
    return m;
}

Eigen::VectorXd Container::get_vector(const std::string& name) const {
    const auto& chunk = get(name);
    if (chunk.type != Type::Float64 || chunk.dims.size() != 1) {
        throw ShapeMismatch("container: " + name + " is not a vector");
    }
    return Eigen::Map<const Eigen::VectorXd>(chunk.f64.data(),
                                             static_cast<Eigen::Index>(chunk.f64.size()));
}

std::vector<std::string> Container::names() const {
    std::vector<std::string> out;
    out.reserve(chunks_.size());
    for (const auto& [name, chunk] : chunks_) out.push_back(name);
    return out;
}

void Container::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("container: cannot open " + path.string());
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(chunks_.size()));
    for (const auto& [name, chunk] : chunks_) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint8_t>(chunk.type));
        write_pod(out, static_cast<std::uint32_t>(chunk.dims.size()));
        for (auto d : chunk.dims) write_pod(out, d);
        std::uint64_t bytes = 0;
        const char* payload = nullptr;
        switch (chunk.type) {
            case Type::Float64:
                bytes = chunk.f64.size() * sizeof(double);
                payload = reinterpret_cast<const char*>(chunk.f64.data());
                break;
            case Type::Int64:
                bytes = chunk.i64.size() * sizeof(std::int64_t);
                payload = reinterpret_cast<const char*>(chunk.i64.data());
                break;
            case Type::Bytes:
                bytes = chunk.bytes.size();
                payload = chunk.bytes.data();
                break;
        }
        write_pod(out, bytes);
        out.write(payload, static_cast<std::streamsize>(bytes));
    }
    if (!out) throw ParseError("container: write failed for " + path.string());
}

Container Container::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("container: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("container: bad magic");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) throw ParseError("container: unsupported version");
    const auto count = read_pod<std::uint64_t>(in);

    Container container;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        Chunk chunk;
        chunk.type = static_cast<Type>(read_pod<std::uint8_t>(in));
        const auto ndim = read_pod<std::uint32_t>(in);
        chunk.dims.resize(ndim);
        for (auto& d : chunk.dims) d = read_pod<std::uint64_t>(in);
        const auto bytes = read_pod<std::uint64_t>(in);
        switch (chunk.type) {
            case Type::Float64:
                chunk.f64.resize(bytes / sizeof(double));
                in.read(reinterpret_cast<char*>(chunk.f64.data()), static_cast<std::streamsize>(bytes));
                break;
            case Type::Int64:
                chunk.i64.resize(bytes / sizeof(std::int64_t));
                in.read(reinterpret_cast<char*>(chunk.i64.data()), static_cast<std::streamsize>(bytes));
                break;
            case Type::Bytes:
                chunk.bytes.resize(bytes);
                in.read(chunk.bytes.data(), static_cast<std::streamsize>(bytes));
                break;
            default:
                throw ParseError("container: unknown chunk type");
        }
        if (!in) throw ParseError("container: truncated payload for " + name);
        container.chunks_[name] = std::move(chunk);
    }
    return container;
}

}  // namespace cfan
