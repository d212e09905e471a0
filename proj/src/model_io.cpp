#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "geocell/errors.hpp"
#include "geocell/model.hpp"

namespace geocell {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

template <typename T>
T get(std::ifstream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!in) throw IoError("checkpoint truncated");
  return value;
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in) {
  const std::uint32_t len = get<std::uint32_t>(in);
  if (len > (1u << 20)) throw IoError("implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& checkpoint) {
  check_config(checkpoint.config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");

  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const ModelConfig& c = checkpoint.config;
  put<std::int64_t>(out, c.image_size);
  put<std::int64_t>(out, c.patch_size);
  put<std::int64_t>(out, c.token_dim);
  put<std::int64_t>(out, c.heads_h);
  put<std::int64_t>(out, c.embed_dim);
  put<std::int64_t>(out, c.n_lods);
  put<std::uint8_t>(out, c.lod_embedding ? 1 : 0);

  std::vector<std::pair<std::string, double>> extras = checkpoint.extras;
  std::sort(extras.begin(), extras.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(extras.size()));
  for (const auto& [key, value] : extras) {
    put_string(out, key);
    put<double>(out, value);
  }

  std::uint64_t count = 0;
  checkpoint.params.for_each_tensor(
      [&](const std::string&, const Tensor&) { ++count; });
  put<std::uint64_t>(out, count);
  checkpoint.params.for_each_tensor(
      [&](const std::string& name, const Tensor& t) {
        put_string(out, name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (const std::int64_t d : t.dims) put<std::int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(double)));
      });
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a model checkpoint: " + path.string());
  if (get<std::uint32_t>(in) != kVersion)
    throw IoError("unsupported checkpoint version");

  Checkpoint checkpoint;
  ModelConfig& c = checkpoint.config;
  c.image_size = get<std::int64_t>(in);
  c.patch_size = get<std::int64_t>(in);
  c.token_dim = get<std::int64_t>(in);
  c.heads_h = get<std::int64_t>(in);
  c.embed_dim = get<std::int64_t>(in);
  c.n_lods = get<std::int64_t>(in);
  c.lod_embedding = get<std::uint8_t>(in) != 0;
  check_config(c);

  const std::uint32_t extra_count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < extra_count; ++i) {
    std::string key = get_string(in);
    const double value = get<double>(in);
    checkpoint.extras.emplace_back(std::move(key), value);
  }

  struct Loaded {
    std::vector<std::int64_t> dims;
    std::vector<double> v;
  };
  std::map<std::string, Loaded> tensors;
  const std::uint64_t count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const std::uint32_t rank = get<std::uint32_t>(in);
    if (rank > 8) throw IoError("implausible tensor rank");
    Loaded t;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::int64_t dim = get<std::int64_t>(in);
      if (dim <= 0) throw IoError("invalid tensor dimension");
      t.dims.push_back(dim);
      numel *= static_cast<std::size_t>(dim);
    }
    t.v.resize(numel);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw IoError("checkpoint truncated");
    if (!tensors.emplace(std::move(name), std::move(t)).second)
      throw IoError("duplicate tensor in checkpoint");
  }

  checkpoint.params = zero_params(c);
  std::size_t used = 0;
  checkpoint.params.for_each_tensor([&](const std::string& name, Tensor& t) {
    const auto it = tensors.find(name);
    if (it == tensors.end())
      throw IoError("checkpoint missing tensor " + name);
    if (it->second.dims != t.dims)
      throw IoError("checkpoint tensor " + name + " has the wrong shape");
    t.v = std::move(it->second.v);
    ++used;
  });
  if (used != tensors.size())
    throw IoError("checkpoint holds unexpected tensors");
  return checkpoint;
}

}  // namespace geocell
