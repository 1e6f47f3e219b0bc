#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace serverlens {

// Error taxonomy. Every failure surfaced by the library is one of these.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct FitError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IntegrityError : Error { using Error::Error; };
struct VersionError : Error { using Error::Error; };

// Missing cells in numeric feature rows are quiet NaNs.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) noexcept { return std::isnan(v); }

// Dense row-major matrix of doubles. Missing cells are NaN.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double> column(std::size_t c) const;
    void append_row(std::span<const double> values);
    Matrix select_rows(std::span<const std::size_t> indices) const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool operator==(const Matrix& other) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Which partition a block of rows came from. Fitting code refuses anything
// other than Train.
enum class Partition { Train, Validation, Test };

std::string_view to_string(Partition p) noexcept;

struct TaggedRows {
    Partition partition = Partition::Train;
    Matrix rows;
};

// Child seed derivation: (seed, purpose label) -> independent 64-bit seed.
// splitmix64 over seed xor FNV-1a(label).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index) noexcept;

}  // namespace serverlens
