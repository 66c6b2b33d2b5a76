#include "projnet/nten.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace projnet::nten {

static_assert(std::endian::native == std::endian::little, "NTEN I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'N', 'T', 'E', 'N', '1'};

}  // namespace

std::vector<std::uint8_t> encode(const Tensor& t) {
    if (!t.defined()) throw InvalidArgument("nten: cannot encode an undefined tensor");
    std::vector<std::uint8_t> out;
    const std::size_t payload = t.numel() * dtype_size(t.dtype());
    out.reserve(7 + 8 * t.rank() + payload);
    out.insert(out.end(), kMagic, kMagic + 5);
    out.push_back(static_cast<std::uint8_t>(t.dtype()));
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) {
        const auto v = static_cast<std::uint64_t>(d);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }
    const std::size_t header = out.size();
    out.resize(header + payload);
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        std::memcpy(out.data() + header, t.data<T>().data(), payload);
    });
    return out;
}

Tensor decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
        throw FormatError("nten: bad magic (expected NTEN1)");
    }
    const std::uint8_t code = bytes[5];
    if (code != 1 && code != 2) throw FormatError(fmt::format("nten: unknown dtype code {}", code));
    const auto dtype = static_cast<DType>(code);
    const std::size_t rank = bytes[6];
    if (rank > Tensor::kMaxRank) throw FormatError(fmt::format("nten: rank {} exceeds {}", rank, Tensor::kMaxRank));
    const std::size_t header = 7 + 8 * rank;
    if (bytes.size() < header) {
        throw FormatError(fmt::format("nten: truncated header: expected at least {} bytes, got {}", header,
                                      bytes.size()));
    }
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[7 + 8 * i + b]) << (8 * b);
        if (v == 0) throw FormatError(fmt::format("nten: zero extent on axis {}", i));
        shape[i] = static_cast<std::size_t>(v);
    }
    const std::size_t expected = header + shape_numel(shape) * dtype_size(dtype);
    if (bytes.size() != expected) {
        throw FormatError(fmt::format("nten: size mismatch: expected {} bytes, got {}", expected, bytes.size()));
    }
    Tensor t(shape, dtype);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        std::memcpy(t.data<T>().data(), bytes.data() + header, expected - header);
    });
    return t;
}

void save(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = encode(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

Tensor load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode(bytes);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace projnet::nten
