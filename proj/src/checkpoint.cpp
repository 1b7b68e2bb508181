#include <cstring>
#include <fstream>
#include <map>

#include "icgm/net.hpp"

namespace icgm {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'G', 'M', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw NetError("checkpoint truncated");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), s.size());
}

std::string read_string(std::istream& in) {
  const uint32_t n = read_pod<uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw NetError("checkpoint truncated");
  return s;
}

void write_doubles(std::ostream& out, std::span<const double> v) {
  write_pod<uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in) {
  const uint64_t n = read_pod<uint64_t>(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw NetError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NetError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const NetConfig& c = ckpt.config;
  write_pod<int32_t>(out, c.input_dim);
  write_pod<int32_t>(out, c.intra_layers);
  write_pod<int32_t>(out, c.cross_iterations);
  write_pod<int32_t>(out, c.d_intra);
  write_pod<int32_t>(out, c.d_cross);
  write_pod<int32_t>(out, c.sinkhorn_iters);
  write_pod<double>(out, c.sinkhorn_epsilon);
  write_pod<uint8_t>(out, c.cross_embedding_enabled);
  write_pod<uint8_t>(out, c.similarity_clamp);
  write_pod<uint8_t>(out, c.share_cross_directions);
  write_pod<uint8_t>(out, c.recompute_affinity);
  write_pod<double>(out, c.exp_clamp);
  write_pod<uint64_t>(out, ckpt.seed);
  write_doubles(out, ckpt.norm.mean);
  write_doubles(out, ckpt.norm.stddev);

  auto named = const_cast<ParameterSet&>(ckpt.params).named();
  write_pod<uint32_t>(out, static_cast<uint32_t>(named.size()));
  for (auto& [name, tensor] : named) {
    write_string(out, name);
    write_pod<int32_t>(out, tensor.rows());
    write_pod<int32_t>(out, tensor.cols());
    write_doubles(out, tensor.values());
  }
  if (!out) throw NetError("checkpoint write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NetError("cannot read checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw NetError("'" + path + "' is not a checkpoint file");
  const uint32_t version = read_pod<uint32_t>(in);
  if (version != kVersion)
    throw NetError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  NetConfig& c = ckpt.config;
  c.input_dim = read_pod<int32_t>(in);
  c.intra_layers = read_pod<int32_t>(in);
  c.cross_iterations = read_pod<int32_t>(in);
  c.d_intra = read_pod<int32_t>(in);
  c.d_cross = read_pod<int32_t>(in);
  c.sinkhorn_iters = read_pod<int32_t>(in);
  c.sinkhorn_epsilon = read_pod<double>(in);
  c.cross_embedding_enabled = read_pod<uint8_t>(in);
  c.similarity_clamp = read_pod<uint8_t>(in);
  c.share_cross_directions = read_pod<uint8_t>(in);
  c.recompute_affinity = read_pod<uint8_t>(in);
  c.exp_clamp = read_pod<double>(in);
  ckpt.seed = read_pod<uint64_t>(in);
  ckpt.norm.mean = read_doubles(in);
  ckpt.norm.stddev = read_doubles(in);

  std::map<std::string, Tensor> tensors;
  const uint32_t count = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in);
    const int rows = read_pod<int32_t>(in);
    const int cols = read_pod<int32_t>(in);
    tensors[name] = Tensor::from_values(rows, cols, read_doubles(in), true);
  }

  // Rebuild the parameter structure and verify every expected tensor exists.
  ckpt.params = ParameterSet::init(c, ckpt.seed);
  for (auto& [name, tensor] : ckpt.params.named()) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw NetError("checkpoint missing tensor '" + name + "'");
    if (it->second.rows() != tensor.rows() ||
        it->second.cols() != tensor.cols())
      throw NetError("checkpoint tensor '" + name + "' has wrong shape");
    std::copy(it->second.values().begin(), it->second.values().end(),
              tensor.values_mut().begin());
  }
  return ckpt;
}

}  // namespace icgm
