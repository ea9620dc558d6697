#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/base/tensor.hpp"
#include "flare/nn/params.hpp"

namespace flare::nn {

/// Self-describing binary container: named sections of named tensors (model
/// parameters, target copies, optimizer moments) plus a string map for
/// metadata. Little-endian, versioned via magic string.
template <typename S>
struct Checkpoint {
  std::map<std::string, NamedTensors<S>> sections;
  std::map<std::string, std::string> text;

  static constexpr char kMagic[9] = "flareck1";

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    write_u32(f, static_cast<uint32_t>(sizeof(S)));
    write_u32(f, static_cast<uint32_t>(text.size()));
    for (const auto& [k, v] : text) {
      write_str(f, k);
      write_str(f, v);
    }
    write_u32(f, static_cast<uint32_t>(sections.size()));
    for (const auto& [name, tensors] : sections) {
      write_str(f, name);
      write_u64(f, tensors.size());
      for (const auto& [tname, t] : tensors) {
        write_str(f, tname);
        write_u32(f, static_cast<uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) write_u32(f, static_cast<uint32_t>(t.dim(d)));
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(S)));
      }
    }
    if (!f) throw std::runtime_error("short write on checkpoint: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    const uint32_t ssize = read_u32(f);
    if (ssize != sizeof(S))
      throw std::runtime_error("checkpoint scalar width " + std::to_string(ssize) +
                               " does not match build (" + std::to_string(sizeof(S)) + ")");
    Checkpoint ck;
    const uint32_t ntext = read_u32(f);
    for (uint32_t i = 0; i < ntext; ++i) {
      std::string k = read_str(f);
      ck.text[k] = read_str(f);
    }
    const uint32_t nsec = read_u32(f);
    for (uint32_t i = 0; i < nsec; ++i) {
      std::string sname = read_str(f);
      const uint64_t count = read_u64(f);
      NamedTensors<S> tensors;
      for (uint64_t j = 0; j < count; ++j) {
        std::string tname = read_str(f);
        const uint32_t rank = read_u32(f);
        std::vector<int> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(f));
        Tensor<S> t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(S)));
        tensors.insert(tname, std::move(t));
      }
      ck.sections.emplace(std::move(sname), std::move(tensors));
      if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ofstream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static void write_str(std::ofstream& f, const std::string& s) {
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static uint64_t read_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  static std::string read_str(std::ifstream& f) {
    const uint32_t len = read_u32(f);
    if (len > (1u << 20)) throw std::runtime_error("checkpoint string too long");
    std::string s(len, '\0');
    f.read(s.data(), len);
    return s;
  }
};

}  // namespace flare::nn
