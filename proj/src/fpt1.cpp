#include "pat/fpt1.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "pat/error.hpp"

namespace pat {

static_assert(std::endian::native == std::endian::little,
              "FPT1 encoding assumes a little-endian host");

namespace {

constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const std::string& what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (n > remaining()) throw UnexpectedEndError(what);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I32: return 4;
  }
  throw UnsupportedDtypeError(static_cast<int>(dtype));
}

std::vector<std::uint8_t> write_fpt1(const TensorList& tensors) {
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) throw FormatError("duplicate tensor name '" + t.name + "'");
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name too long: '" + t.name.substr(0, 32) + "...'");
    }
    if (!t.value.defined()) throw FormatError("tensor '" + t.name + "' has no value");
    if (t.value.rank() > 255) throw FormatError("tensor '" + t.name + "' has rank above 255");
  }
  std::vector<std::uint8_t> out{'F', 'P', 'T', '1'};
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : t.value.values()) {
      switch (t.dtype) {
        case DType::F32: put<float>(out, static_cast<float>(v)); break;
        case DType::F64: put<double>(out, v); break;
        case DType::I32:
          if (v != std::floor(v) || v < std::numeric_limits<std::int32_t>::min() ||
              v > std::numeric_limits<std::int32_t>::max()) {
            throw FormatError("tensor '" + t.name + "' holds a value not representable as int32");
          }
          put<std::int32_t>(out, static_cast<std::int32_t>(v));
          break;
        default: throw UnsupportedDtypeError(static_cast<int>(t.dtype));
      }
    }
  }
  return out;
}

TensorList read_fpt1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FPT1", 4) != 0) throw NotFpt1Error();
  r.take(4, "magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported FPT1 version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  TensorList out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor " + std::to_string(i);
    const auto name_len = r.get<std::uint16_t>(where + " name length");
    const auto raw_name = r.take(name_len, where + " name");
    NamedTensor t;
    t.name.assign(raw_name.begin(), raw_name.end());
    const auto code = r.get<std::uint8_t>(where + " dtype");
    if (code > 2) throw UnsupportedDtypeError(code);
    t.dtype = static_cast<DType>(code);
    const auto rank = r.get<std::uint8_t>(where + " rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto extent = r.get<std::uint64_t>(where + " dims");
      if (extent != 0 && numel > std::numeric_limits<std::size_t>::max() / extent) {
        throw FormatError("tensor '" + t.name + "' extent overflows");
      }
      numel *= extent;
      shape.push_back(static_cast<std::size_t>(extent));
    }
    const std::size_t elem = dtype_size(t.dtype);
    if (numel > r.remaining() / elem) throw UnexpectedEndError("payload of '" + t.name + "'");
    const auto payload = r.take(numel * elem, "payload of '" + t.name + "'");
    std::vector<double> values(numel);
    for (std::size_t k = 0; k < numel; ++k) {
      const std::uint8_t* p = payload.data() + k * elem;
      if (t.dtype == DType::F32) {
        float f;
        std::memcpy(&f, p, 4);
        values[k] = f;
      } else if (t.dtype == DType::F64) {
        std::memcpy(&values[k], p, 8);
      } else {
        std::int32_t v;
        std::memcpy(&v, p, 4);
        values[k] = v;
      }
    }
    if (!names.insert(t.name).second) throw FormatError("duplicate tensor name '" + t.name + "'");
    t.value = Tensor::from_vector(std::move(shape), std::move(values));
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the last tensor");
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

void save_fpt1(const std::string& path, const TensorList& tensors) {
  write_file_bytes(path, write_fpt1(tensors));
}

TensorList load_fpt1(const std::string& path) { return read_fpt1(read_file_bytes(path)); }

std::map<std::string, Tensor> tensor_map(const TensorList& tensors) {
  std::map<std::string, Tensor> out;
  for (const auto& t : tensors) out[t.name] = t.value;
  return out;
}

}  // namespace pat
