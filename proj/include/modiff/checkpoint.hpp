#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "modiff/denoiser.hpp"

namespace modiff {

// Checkpoint layout: a text manifest, then a little-endian f32 blob.
//
//   MODF 1
//   steps <T>
//   cosine_s <s>
//   layers/hidden/heads/ffn/se_reduction/dct_rows/feature/cond_pool ...
//   tensors <count>
//   tensor <name> f32 <rank> <dims...> <byte offset into blob>
//   blob <byte count>
//   <raw data>
//
// Parameters train in f64 and are stored in f32; loading widens back, so a
// saved model reloads and re-saves byte-identically.
struct Checkpoint {
  DenoiserConfig config;
  int steps = 0;        // diffusion step count the model was trained with
  double cosine_s = 0.008;
  DenoiserModel model;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const DenoiserModel& model, int steps,
                            double cosine_s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const DenoiserConfig& c = model.config();
  char sbuf[64];
  std::snprintf(sbuf, sizeof(sbuf), "%.17g", cosine_s);
  out << "MODF 1\n";
  out << "steps " << steps << "\n";
  out << "cosine_s " << sbuf << "\n";
  out << "layers " << c.layers << "\n";
  out << "hidden " << c.hidden << "\n";
  out << "heads " << c.heads << "\n";
  out << "ffn " << c.ffn << "\n";
  out << "se_reduction " << c.se_reduction << "\n";
  out << "dct_rows " << c.dct_rows << "\n";
  out << "feature " << c.feature << "\n";
  out << "cond_pool " << to_string(c.cond_pool) << "\n";
  out << "tensors " << model.named_parameters().size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, p] : model.named_parameters()) {
    out << "tensor " << name << " f32 " << p->rank();
    for (std::size_t d : p->shape()) out << " " << d;
    out << " " << offset << "\n";
    offset += 4 * p->size();
  }
  out << "blob " << offset << "\n";
  for (const auto& [name, p] : model.named_parameters())
    for (double v : p->values()) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string line;
  auto next_line = [&](const char* what) -> std::string {
    if (!std::getline(in, line))
      throw FormatError(std::string("checkpoint truncated before ") + what);
    return line;
  };
  if (next_line("magic") != "MODF 1")
    throw FormatError("bad checkpoint magic in " + path.string());

  Checkpoint ck;
  DenoiserConfig& c = ck.config;
  auto read_field = [&](const char* key) -> std::string {
    std::istringstream ls(next_line(key));
    std::string k, v;
    ls >> k >> v;
    if (k != key) throw FormatError(std::string("expected field ") + key);
    return v;
  };
  ck.steps = std::stoi(read_field("steps"));
  ck.cosine_s = std::stod(read_field("cosine_s"));
  c.layers = std::stoi(read_field("layers"));
  c.hidden = std::stoi(read_field("hidden"));
  c.heads = std::stoi(read_field("heads"));
  c.ffn = std::stoi(read_field("ffn"));
  c.se_reduction = std::stoi(read_field("se_reduction"));
  c.dct_rows = std::stoi(read_field("dct_rows"));
  c.feature = std::stoi(read_field("feature"));
  c.cond_pool = cond_pool_from_string(read_field("cond_pool"));

  const std::size_t count = std::stoul(read_field("tensors"));
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line("tensor"));
    std::string tag, name, dtype;
    std::size_t rank;
    ls >> tag >> name >> dtype >> rank;
    if (tag != "tensor" || !ls) throw FormatError("malformed tensor line");
    if (dtype != "f32") throw FormatError("unsupported dtype " + dtype);
    Entry e;
    e.name = name;
    e.shape.resize(rank);
    for (auto& d : e.shape) ls >> d;
    ls >> e.offset;
    if (!ls) throw FormatError("malformed tensor line for " + name);
    entries.push_back(std::move(e));
  }
  const std::size_t blob_bytes = std::stoul(read_field("blob"));
  std::vector<char> blob(blob_bytes);
  in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
  if (!in || in.gcount() != static_cast<std::streamsize>(blob_bytes))
    throw LengthError("checkpoint blob truncated in " + path.string());

  Rng init_rng(0);
  ck.model = DenoiserModel::init(c, init_rng);
  if (entries.size() != ck.model.named_parameters().size())
    throw FormatError("checkpoint tensor count does not match layout");
  for (const auto& e : entries) {
    TensorPtr p = ck.model.parameter(e.name);
    if (p->shape() != e.shape)
      throw FormatError("checkpoint shape mismatch for " + e.name);
    if (e.offset + 4 * p->size() > blob_bytes)
      throw LengthError("tensor data out of blob bounds for " + e.name);
    const char* src = blob.data() + e.offset;
    for (std::size_t i = 0; i < p->size(); ++i) {
      float f;
      std::memcpy(&f, src + 4 * i, 4);
      if (!std::isfinite(f))
        throw DataError("non-finite parameter in checkpoint: " + e.name);
      (*p)[i] = static_cast<double>(f);
    }
  }
  return ck;
}

}  // namespace modiff
