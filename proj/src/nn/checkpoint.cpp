#include "sacx/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace sacx::nn {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'C', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  return value;
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
  const auto n = get<std::uint64_t>(is, path);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint " + path.string() + ": corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  return s;
}

}  // namespace

template <typename Scalar>
void Checkpoint<Scalar>::restore(const std::string& prefix, ParameterSet<Scalar>& set) const {
  std::unordered_map<std::string, const Matrix<Scalar>*> by_name;
  for (const auto& [name, m] : tensors) by_name[name] = &m;
  for (std::size_t i = 0; i < set.tensors.size(); ++i) {
    const std::string name = prefix + "/" + std::to_string(i);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (it->second->rows() != set.tensors[i].rows() || it->second->cols() != set.tensors[i].cols())
      throw std::runtime_error("checkpoint tensor " + name + " has the wrong shape");
    set.tensors[i] = *it->second;
  }
  ++set.version;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, sizeof(Scalar));
  put<std::uint64_t>(os, ckpt.metadata.size());
  os.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put<std::uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, m] : ckpt.tensors) {
    put<std::uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto scalar_bytes = get<std::uint32_t>(is, path);
  if (scalar_bytes != sizeof(Scalar))
    throw std::runtime_error("checkpoint " + path.string() + ": stored with " + std::to_string(scalar_bytes) +
                             "-byte scalars");
  Checkpoint<Scalar> ckpt;
  ckpt.metadata = get_string(is, path);
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is, path);
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    if (rows * cols > (1ull << 34)) throw std::runtime_error("checkpoint " + path.string() + ": corrupt tensor shape");
    Matrix<Scalar> m(static_cast<Index>(rows), static_cast<Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
    if (!is) throw std::runtime_error("checkpoint " + path.string() + ": truncated tensor " + name);
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

template struct Checkpoint<float>;
template struct Checkpoint<double>;
template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace sacx::nn
