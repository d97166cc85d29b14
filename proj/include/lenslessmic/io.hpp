#pragma once

// On-disk formats: 16-bit PCM WAV, the LLM1 ciphertext container, the RVQ1
// codebook file, and a JSON mask export. Binary integers and floats are
// little-endian. Every writer goes through a temp file and a rename, so a
// failed write never leaves a partial output behind.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lenslessmic/codec.hpp"
#include "lenslessmic/error.hpp"
#include "lenslessmic/optics.hpp"
#include "lenslessmic/pipeline.hpp"

namespace lenslessmic::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error(ErrorKind::io, "write failed for " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorKind::io, "cannot move output into place: " + path.string());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_f32(double v) { put(static_cast<float>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const Bytes& bytes() const { return bytes_; }

 private:
  Bytes bytes_;
};

// Bounds-checked cursor; running off the end is a format error.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  double get_f32() { return static_cast<double>(get<float>()); }

  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void skip(std::size_t n) { raw(n); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(ErrorKind::format, what_ + ": truncated");
  }

  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

// ---- WAV ----

struct Wave {
  std::vector<double> samples;  // in [-1, 1)
  std::uint32_t sample_rate = 16000;
};

inline Bytes encode_wav(std::span<const double> samples, std::uint32_t sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  Writer w;
  w.raw("RIFF");
  w.put<std::uint32_t>(36 + data_bytes);
  w.raw("WAVE");
  w.raw("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);  // PCM
  w.put<std::uint16_t>(1);  // mono
  w.put<std::uint32_t>(sample_rate);
  w.put<std::uint32_t>(sample_rate * 2);
  w.put<std::uint16_t>(2);
  w.put<std::uint16_t>(16);
  w.raw("data");
  w.put<std::uint32_t>(data_bytes);
  for (double s : samples) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    w.put(static_cast<std::int16_t>(scaled));
  }
  return w.bytes();
}

inline Wave decode_wav(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "wav");
  if (r.raw(4) != "RIFF") throw Error(ErrorKind::format, "wav: missing RIFF header");
  r.get<std::uint32_t>();
  if (r.raw(4) != "WAVE") throw Error(ErrorKind::format, "wav: not a WAVE file");
  Wave wave;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const auto id = r.raw(4);
    const auto size = r.get<std::uint32_t>();
    if (id == "fmt ") {
      if (size < 16) throw Error(ErrorKind::format, "wav: short fmt chunk");
      const auto format = r.get<std::uint16_t>(), channels = r.get<std::uint16_t>();
      wave.sample_rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      const auto bits = r.get<std::uint16_t>();
      if (format != 1 || channels != 1 || bits != 16)
        throw Error(ErrorKind::format, "wav: only 16-bit PCM mono is supported");
      r.skip(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(ErrorKind::format, "wav: data before fmt");
      if (size % 2) throw Error(ErrorKind::format, "wav: odd data size");
      wave.samples.resize(size / 2);
      for (double& s : wave.samples) s = r.get<std::int16_t>() / 32768.0;
      return wave;
    } else {
      r.skip(size + (size & 1));
    }
  }
  throw Error(ErrorKind::format, "wav: no data chunk");
}

inline Wave read_wav(const std::filesystem::path& path) { return decode_wav(read_file(path)); }

inline void write_wav(const std::filesystem::path& path, std::span<const double> samples, std::uint32_t sample_rate) {
  write_file_atomic(path, encode_wav(samples, sample_rate));
}

// ---- LLM1 ciphertext ----

inline constexpr std::uint16_t container_version = 1;

inline Bytes encode_container(const pipeline::CipherContainer& ct) {
  pipeline::validate_container(ct);
  nlohmann::json header = pipeline::to_json(ct.config);
  header["num_samples"] = ct.num_samples;
  const std::string text = header.dump();
  Writer w;
  w.raw("LLM1");
  w.put<std::uint16_t>(ct.version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  w.put<std::uint16_t>(ct.tail_pad);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ct.frames.size()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ct.config.sensor_rows));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ct.config.sensor_cols));
  for (std::size_t j = 0; j < ct.frames.size(); ++j) {
    w.put_f32(ct.mins[j]);
    w.put_f32(ct.maxs[j]);
    for (double v : ct.frames[j].values()) w.put_f32(v);
  }
  return w.bytes();
}

inline pipeline::CipherContainer decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "container");
  if (r.raw(4) != "LLM1") throw Error(ErrorKind::format, "container: bad magic");
  pipeline::CipherContainer ct;
  ct.version = r.get<std::uint16_t>();
  if (ct.version != container_version)
    throw Error(ErrorKind::format, "container: unsupported version " + std::to_string(ct.version));
  const auto text = r.raw(r.get<std::uint32_t>());
  try {
    auto header = nlohmann::json::parse(text);
    if (!header.is_object() || !header.contains("num_samples"))
      throw Error(ErrorKind::format, "container: config block lacks num_samples");
    ct.num_samples = header.at("num_samples").get<std::uint64_t>();
    header.erase("num_samples");
    ct.config = pipeline::config_from_json(header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("container: bad config block: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::format) throw;
    throw Error(ErrorKind::format, std::string("container: bad config block: ") + e.what());
  }
  ct.tail_pad = r.get<std::uint16_t>();
  const auto count = r.get<std::uint32_t>();
  const std::size_t rows = r.get<std::uint16_t>(), cols = r.get<std::uint16_t>();
  if (rows != ct.config.sensor_rows || cols != ct.config.sensor_cols)
    throw Error(ErrorKind::format, "container: sensor dims disagree with the config block");
  if (r.remaining() != static_cast<std::size_t>(count) * (8 + rows * cols * 4))
    throw Error(ErrorKind::format, "container: payload size does not match the frame count");
  ct.frames.reserve(count);
  for (std::uint32_t j = 0; j < count; ++j) {
    ct.mins.push_back(r.get_f32());
    ct.maxs.push_back(r.get_f32());
    Matrix f(rows, cols);
    for (double& v : f.values()) v = r.get_f32();
    ct.frames.push_back(std::move(f));
  }
  if (ct.num_samples > ct.latent_frames() * ct.config.frame_len)
    throw Error(ErrorKind::format, "container: num_samples exceeds the stored frames");
  pipeline::validate_container(ct);
  return ct;
}

inline pipeline::CipherContainer read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

inline void write_container(const std::filesystem::path& path, const pipeline::CipherContainer& ct) {
  write_file_atomic(path, encode_container(ct));
}

// ---- RVQ1 codebooks ----

// Codebooks plus the transform they were trained against.
struct CodebookFile {
  codec::Codebooks books;
  std::uint32_t frame_len = 0;
  std::uint32_t sample_rate = 16000;
  std::uint32_t transform_seed = 0;

  bool operator==(const CodebookFile&) const = default;
};

inline Bytes encode_codebooks(const CodebookFile& f) {
  require(f.books.data.size() == f.books.count * f.books.size * f.books.dim, "codebook data size mismatch");
  Writer w;
  w.raw("RVQ1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.books.count));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.books.size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.books.dim));
  w.put<std::uint32_t>(f.frame_len);
  w.put<std::uint32_t>(f.sample_rate);
  w.put<std::uint32_t>(f.transform_seed);
  w.put<std::uint64_t>(f.books.train_seed);
  for (double v : f.books.data) w.put_f32(v);
  return w.bytes();
}

inline CodebookFile decode_codebooks(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "codebooks");
  if (r.raw(4) != "RVQ1") throw Error(ErrorKind::format, "codebooks: bad magic");
  CodebookFile f;
  f.books.count = r.get<std::uint32_t>();
  f.books.size = r.get<std::uint32_t>();
  f.books.dim = r.get<std::uint32_t>();
  f.frame_len = r.get<std::uint32_t>();
  f.sample_rate = r.get<std::uint32_t>();
  f.transform_seed = r.get<std::uint32_t>();
  f.books.train_seed = r.get<std::uint64_t>();
  const std::size_t n = f.books.count * f.books.size * f.books.dim;
  if (n == 0 || r.remaining() != n * 4) throw Error(ErrorKind::format, "codebooks: payload size mismatch");
  f.books.data.resize(n);
  for (double& v : f.books.data) v = r.get_f32();
  return f;
}

inline CodebookFile read_codebooks(const std::filesystem::path& path) { return decode_codebooks(read_file(path)); }

inline void write_codebooks(const std::filesystem::path& path, const CodebookFile& f) {
  write_file_atomic(path, encode_codebooks(f));
}

// ---- mask export (key material) ----

inline constexpr std::string_view key_material_notice =
    "KEY MATERIAL: this file is the secret mask. Anyone holding it can decrypt.";

inline std::string mask_to_json(const optics::MaskPattern& m) {
  m.validate();
  return nlohmann::json{{"key_material", key_material_notice},
                        {"side", m.side},
                        {"bit_depth", m.bit_depth},
                        {"seed", m.seed},
                        {"levels", m.levels}}
             .dump(2) +
         "\n";
}

inline optics::MaskPattern mask_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    optics::MaskPattern m;
    m.side = j.at("side").get<int>();
    m.bit_depth = j.at("bit_depth").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.levels = j.at("levels").get<std::vector<int>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("mask file: ") + e.what());
  }
}

}  // namespace lenslessmic::io
