#include "focl/checkpoint.hpp"

#include "focl/common.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace focl {
namespace {

constexpr char kMagic[8] = {'F', 'O', 'C', 'L', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > (1ull << 31)) throw IoError("checkpoint: implausible string size");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

const Tensor* LoadedCheckpoint::find(const std::string& id) const {
  for (const auto& [eid, t] : entries)
    if (eid == id) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path,
                     const std::vector<const Parameter*>& params,
                     const std::string& config_json,
                     std::uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof kMagic);
  write_u64(os, config_hash);
  write_str(os, config_json);
  write_u64(os, params.size());
  for (const Parameter* p : params) {
    write_str(os, p->id);
    write_u64(os, static_cast<std::uint64_t>(p->tensor.rank));
    write_u64(os, static_cast<std::uint64_t>(p->tensor.values.rows()));
    write_u64(os, static_cast<std::uint64_t>(p->tensor.values.cols()));
    os.write(reinterpret_cast<const char*>(p->tensor.values.data()),
             static_cast<std::streamsize>(sizeof(double) *
                                          p->tensor.values.size()));
  }
  if (!os) throw IoError("short write while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("not a checkpoint file: " + path);
  LoadedCheckpoint ck;
  ck.config_hash = read_u64(is);
  ck.config_json = read_str(is);
  const std::uint64_t count = read_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id = read_str(is);
    const int rank = static_cast<int>(read_u64(is));
    const auto rows = static_cast<Index>(read_u64(is));
    const auto cols = static_cast<Index>(read_u64(is));
    Mat m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw IoError("truncated checkpoint: " + path);
    ck.entries.emplace_back(std::move(id), Tensor(std::move(m), rank));
  }
  return ck;
}

void apply_checkpoint(const LoadedCheckpoint& ck,
                      const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const Tensor* t = ck.find(p->id);
    if (t == nullptr)
      throw IoError("checkpoint is missing parameter '" + p->id + "'");
    if (t->values.rows() != p->tensor.values.rows() ||
        t->values.cols() != p->tensor.values.cols())
      throw IoError("checkpoint shape mismatch for parameter '" + p->id +
                    "'");
    p->tensor = *t;
  }
}

}  // namespace focl
