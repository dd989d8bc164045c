#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cfan {

/// Chunked binary container: little-endian, named chunks of 64-bit floats,
/// 64-bit ints, or raw bytes, each with a dimension list. Used for operator
/// caches and parameter checkpoints; payloads round-trip bit-exactly.
///
/// Layout: "CFCB" u32-version u64-count, then per chunk
///   u32 name_len | name | u8 dtype | u32 ndim | u64 dims[] | u64 bytes | payload
class Container {
public:
    enum class Type : std::uint8_t { Float64 = 0, Int64 = 1, Bytes = 2 };

    struct Chunk {
        Type type = Type::Float64;
        std::vector<std::uint64_t> dims;
        std::vector<double> f64;
        std::vector<std::int64_t> i64;
        std::string bytes;
    };

    void put_f64(const std::string& name, std::vector<std::uint64_t> dims, std::vector<double> data);
    void put_i64(const std::string& name, std::vector<std::uint64_t> dims, std::vector<std::int64_t> data);
    void put_text(const std::string& name, std::string text);
    void put_scalar(const std::string& name, double value);
    void put_scalar_i64(const std::string& name, std::int64_t value);
    void put_matrix(const std::string& name, const Eigen::MatrixXd& m);
    void put_vector(const std::string& name, const Eigen::VectorXd& v);

    bool has(const std::string& name) const { return chunks_.count(name) != 0; }
    const Chunk& get(const std::string& name) const;
    double get_scalar(const std::string& name) const;
    std::int64_t get_scalar_i64(const std::string& name) const;
    const std::string& get_text(const std::string& name) const;
    Eigen::MatrixXd get_matrix(const std::string& name) const;
    Eigen::VectorXd get_vector(const std::string& name) const;

    std::vector<std::string> names() const;

    void write(const std::filesystem::path& path) const;
    static Container read(const std::filesystem::path& path);

private:
    std::map<std::string, Chunk> chunks_;
};

}  // namespace cfan
