#include "moa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "moa/errors.hpp"

namespace moa {

namespace {

constexpr const char* kMagic = "moa-checkpoint 1";

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

Shape parse_dims(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw IoError("checkpoint: malformed shape '" + text + "'");
    s.push_back(std::stoull(part));
  }
  return s;
}

}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& config,
                     const std::vector<NamedParam>& params) {
  std::string header = std::string(kMagic) + "\n";
  std::string payload;
  for (const auto& [k, v] : config) {
    if (k.find_first_of(" =\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw IoError("checkpoint: config entry '" + k + "' cannot be stored");
    header += "config " + k + "=" + v + "\n";
  }
  for (const auto& p : params) {
    if (p.name.find_first_of(" \n") != std::string::npos) throw IoError("checkpoint: bad tensor name '" + p.name + "'");
    std::string dims;
    for (std::size_t i = 0; i < p.tensor.rank(); ++i) dims += (i ? "x" : "") + std::to_string(p.tensor.shape()[i]);
    header += "tensor " + p.name + " " + dims + " " + std::to_string(payload.size()) + "\n";
    for (double v : p.tensor.data()) put_le(payload, v);
  }
  header += "payload " + std::to_string(payload.size()) + "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IoError("'" + path.string() + "' is not a checkpoint");

  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  Checkpoint ck;
  std::vector<Entry> entries;
  std::size_t payload_bytes = 0;
  bool have_payload = false;
  while (!have_payload && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      const auto rest = line.substr(7);
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw IoError("checkpoint: malformed config line '" + line + "'");
      ck.config.emplace_back(rest.substr(0, eq), rest.substr(eq + 1));
    } else if (kind == "tensor") {
      Entry e;
      std::string dims;
      if (!(ls >> e.name >> dims >> e.offset)) throw IoError("checkpoint: malformed tensor line '" + line + "'");
      e.shape = parse_dims(dims);
      entries.push_back(std::move(e));
    } else if (kind == "payload") {
      if (!(ls >> payload_bytes)) throw IoError("checkpoint: malformed payload line");
      have_payload = true;
    } else {
      throw IoError("checkpoint: unexpected line '" + line + "'");
    }
  }
  if (!have_payload) throw IoError("checkpoint: missing payload");
  std::vector<unsigned char> bytes(payload_bytes);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(in.gcount()) != payload_bytes) throw IoError("checkpoint: truncated payload");

  for (const auto& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    if (e.offset % 8 != 0 || e.offset + 8 * n > payload_bytes)
      throw IoError("checkpoint: tensor '" + e.name + "' lies outside the payload");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get_le(bytes.data() + e.offset + 8 * i);
    ck.tensors.emplace_back(e.name, Tensor::from_data(e.shape, std::move(v)));
  }
  return ck;
}

void restore_parameters(const Checkpoint& checkpoint, const std::vector<NamedParam>& params) {
  for (const auto& p : params) {
    const Tensor& src = checkpoint.at(p.name);
    if (src.shape() != p.tensor.shape())
      throw IoError("checkpoint tensor '" + p.name + "' has shape " + src.shape_str() + ", expected " +
                    p.tensor.shape_str());
    Tensor dst = p.tensor;
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

}  // namespace moa
