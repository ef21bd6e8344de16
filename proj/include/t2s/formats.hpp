#pragma once

// Binary sequence and code-stream formats. Little-endian throughout.
//
// SequenceFile:   "TSEQ" u32 version u32 T u32 d u32 width(4|8), then T·d values row-major
// CodeStreamFile: "TCOD" u32 version u32 K u32 M, then M × (u32 code, u32 duration)
//
// Functions here only convert between values and bytes; callers do the I/O.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t2s/tensor.hpp"

namespace t2s::io {

inline constexpr std::uint32_t kFormatVersion = 1;

struct SequenceFile {
    std::uint32_t rows = 0;  // T
    std::uint32_t dim = 0;   // d
    std::uint32_t width = 4;
    std::vector<double> data;  // [T·d]; exactly representable at `width` bytes

    static SequenceFile from_tensor(const Tensor<float>& frames);
    Tensor<float> to_tensor() const;
};

struct CodeStreamFile {
    std::uint32_t codebook_size = 0;  // K
    std::vector<std::uint32_t> codes;
    std::vector<std::uint32_t> durations;
};

std::vector<std::uint8_t> write_sequence(const SequenceFile& f);
SequenceFile read_sequence(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> write_code_stream(const CodeStreamFile& f);
CodeStreamFile read_code_stream(std::span<const std::uint8_t> bytes);

// Little-endian primitives shared with the checkpoint format.
class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void str(const std::string& s);  // u32 length + bytes
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> b, std::string what) : b_(b), what_(std::move(what)) {}
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::span<const std::uint8_t> bytes(std::size_t n);
    std::string str();
    void magic(const char (&m)[5]);
    std::size_t remaining() const { return b_.size() - pos_; }
    void expect_end() const;

private:
    void need(std::size_t n) const;
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
    std::string what_;
};

}  // namespace t2s::io
