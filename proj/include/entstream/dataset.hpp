#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/sortofclevr.hpp"

namespace entstream::soc {

// On-disk layout: magic "SOC1", format version u32, sample count u64, then
// per sample: image 3x75x75 f32, question 11 f32, answer u8, category u8.
// All multi-byte fields little-endian.
static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");
static_assert(sizeof(float) == 4);

inline constexpr char kDatasetMagic[4] = {'S', 'O', 'C', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 4 + 8;
inline constexpr std::size_t kSampleBytes =
    kImageFloats * 4 + kQuestionDims * 4 + 1 + 1;

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, std::uint64_t count)
      : path_(path), declared_(count), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FileError("cannot open '" + path + "' for writing");
    out_.write(kDatasetMagic, 4);
    write_raw(&kDatasetVersion, 4);
    write_raw(&count, 8);
  }

  void write(const QaSample& s) {
    if (s.image.size() != kImageFloats)
      throw ShapeError("sample image has " + std::to_string(s.image.size()) +
                       " floats, expected " + std::to_string(kImageFloats));
    write_raw(s.image.data(), kImageFloats * 4);
    write_raw(s.question.data(), kQuestionDims * 4);
    write_raw(&s.answer, 1);
    write_raw(&s.category, 1);
    ++written_;
  }

  /// Flushes and verifies the declared count; called by the destructor too,
  /// but call explicitly to observe errors.
  void close() {
    if (closed_) return;
    closed_ = true;
    out_.flush();
    if (!out_) throw FileError("write failure on '" + path_ + "'");
    if (written_ != declared_)
      throw ContractError("dataset '" + path_ + "' declared " +
                          std::to_string(declared_) + " samples but wrote " +
                          std::to_string(written_));
  }

  ~DatasetWriter() {
    try {
      close();
    } catch (...) {
    }
  }

 private:
  void write_raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw FileError("write failure on '" + path_ + "'");
  }

  std::string path_;
  std::uint64_t declared_ = 0;
  std::uint64_t written_ = 0;
  bool closed_ = false;
  std::ofstream out_;
};

/// Random-access reader; validates header and total size up front so that a
/// truncated or corrupt file fails fast with the offending byte offset.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FileError("cannot open dataset '" + path + "'");
    char magic[4];
    in_.read(magic, 4);
    if (!in_ || std::memcmp(magic, kDatasetMagic, 4) != 0)
      throw FormatError("'" + path + "': bad magic at byte offset 0");
    std::uint32_t version = 0;
    in_.read(reinterpret_cast<char*>(&version), 4);
    if (!in_ || version != kDatasetVersion)
      throw FormatError("'" + path + "': unsupported format version " +
                        std::to_string(version) + " at byte offset 4");
    in_.read(reinterpret_cast<char*>(&count_), 8);
    if (!in_) throw FormatError("'" + path + "': truncated header at byte offset 8");
    in_.seekg(0, std::ios::end);
    const auto actual = static_cast<std::uint64_t>(in_.tellg());
    const std::uint64_t expected = kDatasetHeaderBytes + count_ * kSampleBytes;
    if (actual != expected)
      throw FormatError("'" + path + "': expected " + std::to_string(expected) +
                        " bytes for " + std::to_string(count_) +
                        " samples, file ends at byte offset " +
                        std::to_string(actual));
  }

  std::uint64_t size() const { return count_; }

  /// Reads one sample into caller-owned buffers (image: kImageFloats floats,
  /// question: kQuestionDims floats).
  void read_into(std::uint64_t index, float* image, float* question,
                 std::uint8_t& answer, std::uint8_t& category) {
    if (index >= count_)
      throw IndexError("sample index " + std::to_string(index) +
                       " out of range [0," + std::to_string(count_) + ")");
    const std::uint64_t off = kDatasetHeaderBytes + index * kSampleBytes;
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(off));
    in_.read(reinterpret_cast<char*>(image),
             static_cast<std::streamsize>(kImageFloats * 4));
    in_.read(reinterpret_cast<char*>(question),
             static_cast<std::streamsize>(kQuestionDims * 4));
    in_.read(reinterpret_cast<char*>(&answer), 1);
    in_.read(reinterpret_cast<char*>(&category), 1);
    if (!in_)
      throw FormatError("'" + path_ + "': read failure at byte offset " +
                        std::to_string(off));
    if (answer >= kAnswerClasses)
      throw FormatError("'" + path_ + "': invalid answer class " +
                        std::to_string(answer) + " at byte offset " +
                        std::to_string(off + kSampleBytes - 2));
    if (category > 1)
      throw FormatError("'" + path_ + "': invalid category " +
                        std::to_string(category) + " at byte offset " +
                        std::to_string(off + kSampleBytes - 1));
  }

  QaSample read(std::uint64_t index) {
    QaSample s;
    s.image.resize(kImageFloats);
    read_into(index, s.image.data(), s.question.data(), s.answer, s.category);
    return s;
  }

 private:
  std::string path_;
  std::uint64_t count_ = 0;
  std::ifstream in_;
};

inline void write_dataset(const std::vector<QaSample>& samples,
                          const std::string& path) {
  DatasetWriter w(path, samples.size());
  for (const auto& s : samples) w.write(s);
  w.close();
}

inline std::vector<QaSample> read_dataset(const std::string& path) {
  DatasetReader r(path);
  std::vector<QaSample> samples;
  samples.reserve(r.size());
  for (std::uint64_t i = 0; i < r.size(); ++i) samples.push_back(r.read(i));
  return samples;
}

}  // namespace entstream::soc
