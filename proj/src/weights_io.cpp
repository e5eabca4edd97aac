#include "restv2/weights_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <sstream>

#include "restv2/errors.hpp"
#include "restv2/report.hpp"

namespace restv2 {

namespace {

constexpr char kWeightMagic[4] = {'R', 'S', 'V', '2'};
constexpr char kTensorMagic[4] = {'R', 'S', 'V', 'T'};

void put_u16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v & 0xff);
  out += static_cast<char>(v >> 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("file truncated while reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(take(1, what)[0]); }
  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(s[0]) | (static_cast<std::uint8_t>(s[1]) << 8));
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<float> read_floats(std::string_view raw) {
  std::vector<float> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<std::uint8_t>(raw[i * 4 + b]);
    out[i] = std::bit_cast<float>(v);
  }
  return out;
}

std::size_t parse_size(const std::string& s, const std::string& line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("malformed manifest line '" + line + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace

std::string encode_weights(const NamedWeights<float>& weights) {
  std::string manifest;
  std::size_t offset = 0;
  for (const auto& [name, t] : weights.entries()) {
    if (name.find_first_of("\t\n") != std::string::npos) throw FormatError("parameter name '" + name + "' has tab or newline");
    std::string dims;
    for (std::size_t i = 0; i < t.rank(); ++i) dims += (i ? "," : "") + std::to_string(t.dim(i));
    manifest += name + "\tf32\t" + dims + "\t" + std::to_string(offset) + "\n";
    offset += t.size() * 4;
  }
  std::string out(kWeightMagic, 4);
  put_u16(out, kWeightFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;
  out.reserve(out.size() + offset + 4);
  for (const auto& [name, t] : weights.entries())
    for (float f : t.data()) put_f32(out, f);
  put_u32(out, crc32_of(out));
  return out;
}

NamedWeights<float> decode_weights(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kWeightMagic, 4)) throw FormatError("not a weight file (bad magic)");
  const auto version = r.u16("version");
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  const auto manifest_len = r.u32("manifest length");
  const std::string manifest(r.take(manifest_len, "manifest"));
  if (r.remaining() < 4) throw FormatError("file truncated before checksum");
  const std::size_t payload_len = r.remaining() - 4;
  const auto payload = r.take(payload_len, "payload");
  const auto stored_crc = r.u32("checksum");
  if (crc32_of(bytes.substr(0, bytes.size() - 4)) != stored_crc) throw FormatError("checksum mismatch");

  NamedWeights<float> out;
  std::istringstream lines(manifest);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 4) throw FormatError("malformed manifest line '" + line + "'");
    if (fields[1] != "f32") throw FormatError("unsupported dtype '" + fields[1] + "' for '" + fields[0] + "'");
    Shape shape;
    std::stringstream ds(fields[2]);
    std::string d;
    while (std::getline(ds, d, ',')) shape.push_back(parse_size(d, line));
    const std::size_t off = parse_size(fields[3], line);
    const std::size_t len = numel(shape) * 4;
    if (off > payload.size() || payload.size() - off < len) {
      throw FormatError("tensor '" + fields[0] + "' extends past the payload");
    }
    out.insert(fields[0], TensorF(shape, read_floats(payload.substr(off, len))));
  }
  return out;
}

void save_weights(const NamedWeights<float>& weights, const std::string& path) {
  write_file_atomic(path, encode_weights(weights));
}

NamedWeights<float> load_weights(const std::string& path) { return decode_weights(read_file(path)); }

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  save_weights(model.weights().template cast<float>(), path);
}

template <typename T>
Model<T> load_model(const ModelConfig& cfg, const std::string& path) {
  auto weights = load_weights(path);
  check_against_plan(weights, cfg);
  return Model<T>(cfg, weights.template cast<T>());
}

template void save_model(const Model<float>&, const std::string&);
template void save_model(const Model<double>&, const std::string&);
template Model<float> load_model<float>(const ModelConfig&, const std::string&);
template Model<double> load_model<double>(const ModelConfig&, const std::string&);

std::string encode_tensor(const TensorF& t) {
  if (t.rank() > 255) throw FormatError("tensor rank too large");
  std::string out(kTensorMagic, 4);
  out += static_cast<char>(t.rank());
  for (std::size_t i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
  for (float f : t.data()) put_f32(out, f);
  return out;
}

TensorF decode_tensor(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kTensorMagic, 4)) throw FormatError("not a tensor file (bad magic)");
  const auto rank = r.u8("rank");
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) shape.push_back(r.u32("dims"));
  const std::size_t len = numel(shape) * 4;
  if (r.remaining() != len) {
    throw FormatError("tensor payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(len));
  }
  return TensorF(shape, read_floats(r.take(len, "payload")));
}

void save_tensor(const TensorF& t, const std::string& path) { write_file_atomic(path, encode_tensor(t)); }

TensorF load_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

}  // namespace restv2
