#pragma once

// File formats: Matrix Market (coordinate and array) for system matrices,
// a 64-bit-index coordinate variant for the unfolded bilinear tensor, and a
// small binary container for dense factors and snapshot matrices.
//
// Binary container layout (little endian, host order):
//   char[4]  magic "LPVB"
//   uint32   version (1)
//   uint32   record count
//   per record:
//     uint32   name length, then name bytes
//     uint32   dtype (1 = float64)
//     uint64   rows, uint64 cols
//     float64  rows*cols values, column-major

#include "lpvsdre/core.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>

namespace lpvsdre::io {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MarketHeader {
    bool coordinate = true;
    bool symmetric = false;
};

namespace detail {

inline MarketHeader parse_banner(const std::string& line, const std::string& path) {
    std::istringstream is(line);
    std::string tag, object, format, field, symmetry;
    is >> tag >> object >> format >> field >> symmetry;
    if (tag != "%%MatrixMarket" || object != "matrix")
        throw IoError("not a Matrix Market matrix file: " + path);
    if (field != "real" && field != "integer" && field != "double")
        throw IoError("unsupported Matrix Market field '" + field + "' in " + path);
    MarketHeader h;
    h.coordinate = (format == "coordinate");
    if (!h.coordinate && format != "array") throw IoError("unsupported format '" + format + "'");
    h.symmetric = (symmetry == "symmetric");
    if (!h.symmetric && symmetry != "general")
        throw IoError("unsupported symmetry '" + symmetry + "' in " + path);
    return h;
}

inline std::string next_data_line(std::istream& in) {
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '%') continue;
        return line;
    }
    throw IoError("unexpected end of Matrix Market file");
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

}  // namespace detail

/// Writes a sparse matrix as "coordinate real general" with 1-based indices.
inline void write_market(const std::filesystem::path& path, const SpMat& A) {
    auto out = detail::open_out(path);
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
    out << std::setprecision(17);
    for (Index k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it)
            out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

/// Writes a dense matrix in "array real general" (column-major) format.
inline void write_market_dense(const std::filesystem::path& path, const Mat& A) {
    auto out = detail::open_out(path);
    out << "%%MatrixMarket matrix array real general\n";
    out << A.rows() << ' ' << A.cols() << '\n';
    out << std::setprecision(17);
    for (Index j = 0; j < A.cols(); ++j)
        for (Index i = 0; i < A.rows(); ++i) out << A(i, j) << '\n';
}

/// Reads coordinate or array files into a sparse matrix (symmetric storage is
/// expanded).
inline SpMat read_market(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string banner;
    std::getline(in, banner);
    const MarketHeader h = detail::parse_banner(banner, path.string());
    std::istringstream dims(detail::next_data_line(in));
    Index rows = 0, cols = 0, nnz = 0;
    dims >> rows >> cols;
    std::vector<Triplet> trips;
    if (h.coordinate) {
        dims >> nnz;
        trips.reserve(static_cast<std::size_t>(h.symmetric ? 2 * nnz : nnz));
        for (Index e = 0; e < nnz; ++e) {
            std::istringstream ls(detail::next_data_line(in));
            Index i = 0, j = 0;
            double v = 0.0;
            if (!(ls >> i >> j >> v)) throw IoError("malformed entry in " + path.string());
            if (i < 1 || j < 1 || i > rows || j > cols)
                throw IoError("index out of range in " + path.string());
            trips.emplace_back(i - 1, j - 1, v);
            if (h.symmetric && i != j) trips.emplace_back(j - 1, i - 1, v);
        }
    } else {
        for (Index j = 0; j < cols; ++j)
            for (Index i = (h.symmetric ? j : 0); i < rows; ++i) {
                const double v = std::stod(detail::next_data_line(in));
                if (v == 0.0) continue;
                trips.emplace_back(i, j, v);
                if (h.symmetric && i != j) trips.emplace_back(j, i, v);
            }
    }
    SpMat A(rows, cols);
    A.setFromTriplets(trips.begin(), trips.end());
    return A;
}

inline Mat read_market_dense(const std::filesystem::path& path) {
    return Mat(read_market(path));
}

/// One nonzero of a third-order tensor T with N(v,w)_i = sum T_ijk v_j w_k.
struct TensorEntry {
    Index i = 0, j = 0, k = 0;
    double value = 0.0;
};

/// Mode-1 unfolding (n x n^2, column index j*n + k) in coordinate format with
/// 64-bit column indices.
inline void write_tensor_market(const std::filesystem::path& path, Index n,
                                const std::vector<TensorEntry>& entries) {
    auto out = detail::open_out(path);
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << "% mode-1 unfolding of a bilinear operator, column = j*n + k (0-based j,k)\n";
    out << n << ' ' << static_cast<std::int64_t>(n) * n << ' ' << entries.size() << '\n';
    out << std::setprecision(17);
    for (const auto& e : entries)
        out << e.i + 1 << ' ' << static_cast<std::int64_t>(e.j) * n + e.k + 1 << ' ' << e.value
            << '\n';
}

inline std::pair<Index, std::vector<TensorEntry>> read_tensor_market(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string banner;
    std::getline(in, banner);
    const MarketHeader h = detail::parse_banner(banner, path.string());
    if (!h.coordinate || h.symmetric) throw IoError("tensor file must be coordinate general");
    std::istringstream dims(detail::next_data_line(in));
    std::int64_t rows = 0, cols = 0, nnz = 0;
    dims >> rows >> cols >> nnz;
    if (cols != rows * rows) throw IoError("tensor unfolding must be n x n^2: " + path.string());
    std::vector<TensorEntry> entries;
    entries.reserve(static_cast<std::size_t>(nnz));
    for (std::int64_t e = 0; e < nnz; ++e) {
        std::istringstream ls(detail::next_data_line(in));
        std::int64_t i = 0, c = 0;
        double v = 0.0;
        if (!(ls >> i >> c >> v)) throw IoError("malformed tensor entry in " + path.string());
        --i;
        --c;
        if (i < 0 || i >= rows || c < 0 || c >= cols) throw IoError("tensor index out of range");
        entries.push_back({static_cast<Index>(i), static_cast<Index>(c / rows),
                           static_cast<Index>(c % rows), v});
    }
    return {static_cast<Index>(rows), std::move(entries)};
}

using Container = std::map<std::string, Mat>;

inline void write_container(const std::filesystem::path& path, const Container& records) {
    auto out = detail::open_out(path, true);
    auto put32 = [&](std::uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); };
    auto put64 = [&](std::uint64_t x) { out.write(reinterpret_cast<const char*>(&x), 8); };
    out.write("LPVB", 4);
    put32(1);
    put32(static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, m] : records) {
        put32(static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put32(1);
        put64(static_cast<std::uint64_t>(m.rows()));
        put64(static_cast<std::uint64_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    auto get32 = [&] {
        std::uint32_t x = 0;
        in.read(reinterpret_cast<char*>(&x), 4);
        return x;
    };
    auto get64 = [&] {
        std::uint64_t x = 0;
        in.read(reinterpret_cast<char*>(&x), 8);
        return x;
    };
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LPVB", 4) != 0) throw IoError("bad container magic: " + path.string());
    if (get32() != 1) throw IoError("unsupported container version: " + path.string());
    const std::uint32_t count = get32();
    Container records;
    for (std::uint32_t r = 0; r < count; ++r) {
        std::string name(get32(), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        if (get32() != 1) throw IoError("unsupported dtype in " + path.string());
        const auto rows = static_cast<Index>(get64());
        const auto cols = static_cast<Index>(get64());
        Mat m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
        if (!in) throw IoError("truncated container: " + path.string());
        records.emplace(std::move(name), std::move(m));
    }
    return records;
}

inline void write_matrix(const std::filesystem::path& path, const Mat& m) {
    write_container(path, {{"data", m}});
}

inline Mat read_matrix(const std::filesystem::path& path) {
    auto c = read_container(path);
    auto it = c.find("data");
    if (it == c.end()) throw IoError("container has no 'data' record: " + path.string());
    return it->second;
}

/// Shortest round-trip decimal form for CSV cells.
inline std::string fmt_double(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    auto out = detail::open_out(path);
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << fmt_double(row[c]);
        out << '\n';
    }
}

}  // namespace lpvsdre::io
