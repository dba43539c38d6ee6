#pragma once

// Binary containers for datasets and checkpoints. Layout, in file order:
//   bytes 0..7   magic ("RDCLDATA" for datasets, "RDCLCKPT" for checkpoints)
//   bytes 8..11  header length H, little-endian u32
//   bytes 12..12+H-1  JSON header (version, spec/param metadata, counts)
//   remainder    payload of little-endian IEEE-754 f64 values
// Parse errors report the byte offset at which reading failed.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdcl/nn.hpp"
#include "rdcl/synth.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kContainerVersion = 1;

namespace detail_io {

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64(const std::string& buf, std::size_t offset) {
  if (offset + 8 > buf.size())
    throw IoError("truncated payload at byte offset " + std::to_string(offset));
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(
                static_cast<unsigned char>(buf[offset + i]))
            << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path);
}

inline std::string make_container(const std::string& magic,
                                  const nlohmann::json& header,
                                  const std::string& payload) {
  std::string buf = magic;
  const std::string hdr = header.dump();
  const std::uint32_t h = static_cast<std::uint32_t>(hdr.size());
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((h >> (8 * i)) & 0xff));
  buf += hdr;
  buf += payload;
  return buf;
}

// Returns (header, payload offset) after validating magic and version.
inline std::pair<nlohmann::json, std::size_t> open_container(
    const std::string& buf, const std::string& magic) {
  if (buf.size() < 12)
    throw IoError("truncated container at byte offset " +
                  std::to_string(buf.size()));
  if (buf.compare(0, 8, magic) != 0)
    throw IoError("bad magic at byte offset 0, expected " + magic);
  std::uint32_t h = 0;
  for (int i = 0; i < 4; ++i)
    h |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[8 + i]))
         << (8 * i);
  if (12 + static_cast<std::size_t>(h) > buf.size())
    throw IoError("truncated header at byte offset " +
                  std::to_string(buf.size()));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(12, h));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed JSON header at byte offset 12: ") +
                  e.what());
  }
  if (!header.contains("version") || !header["version"].is_number_integer())
    throw IoError("header missing integer 'version'");
  const int version = header["version"].get<int>();
  if (version != kContainerVersion)
    throw IoError("unsupported container version " + std::to_string(version) +
                  ", expected " + std::to_string(kContainerVersion));
  return {header, 12 + static_cast<std::size_t>(h)};
}

}  // namespace detail_io

// Per episode, payload order: obj1 frames (T*d), obj1 audio (d), obj2 frames,
// obj2 audio, question (d), then six f64-coded integers: obj1 static class,
// obj1 dynamic class, obj2 static class, obj2 dynamic class, property, label.
inline void write_dataset(const std::string& path, const Dataset& ds) {
  nlohmann::json header{
      {"version", kContainerVersion},
      {"n_episodes", ds.episodes.size()},
      {"spec",
       {{"n_static_classes", ds.spec.n_static_classes},
        {"n_dynamic_classes", ds.spec.n_dynamic_classes},
        {"T", ds.spec.T},
        {"d", ds.spec.d},
        {"noise_std", ds.spec.noise_std},
        {"seed", ds.spec.seed}}}};
  std::string payload;
  auto put_vec = [&](const std::vector<double>& v) {
    for (double x : v) detail_io::put_f64(payload, x);
  };
  auto put_obj = [&](const ObjectRecord& o) {
    for (const auto& f : o.frames) put_vec(f);
    put_vec(o.audio);
  };
  for (const auto& ep : ds.episodes) {
    put_obj(ep.obj1);
    put_obj(ep.obj2);
    put_vec(ep.question);
    for (double v : {static_cast<double>(ep.obj1.static_class),
                     static_cast<double>(ep.obj1.dynamic_class),
                     static_cast<double>(ep.obj2.static_class),
                     static_cast<double>(ep.obj2.dynamic_class),
                     static_cast<double>(ep.property),
                     static_cast<double>(ep.label)})
      detail_io::put_f64(payload, v);
  }
  detail_io::write_file(path,
                        detail_io::make_container("RDCLDATA", header, payload));
}

inline Dataset read_dataset(const std::string& path) {
  const std::string buf = detail_io::read_file(path);
  auto [header, offset] = detail_io::open_container(buf, "RDCLDATA");
  Dataset ds;
  try {
    const auto& sp = header.at("spec");
    ds.spec.n_static_classes = sp.at("n_static_classes").get<std::size_t>();
    ds.spec.n_dynamic_classes = sp.at("n_dynamic_classes").get<std::size_t>();
    ds.spec.T = sp.at("T").get<std::size_t>();
    ds.spec.d = sp.at("d").get<std::size_t>();
    ds.spec.noise_std = sp.at("noise_std").get<double>();
    ds.spec.seed = sp.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed dataset header: ") + e.what());
  }
  const std::size_t n = header.value("n_episodes", std::size_t{0});
  const std::size_t T = ds.spec.T, d = ds.spec.d;
  std::size_t pos = offset;
  auto get_vec = [&](std::size_t len) {
    std::vector<double> v(len);
    for (std::size_t i = 0; i < len; ++i, pos += 8)
      v[i] = detail_io::get_f64(buf, pos);
    return v;
  };
  auto get_obj = [&] {
    ObjectRecord o;
    for (std::size_t t = 0; t < T; ++t) o.frames.push_back(get_vec(d));
    o.audio = get_vec(d);
    return o;
  };
  for (std::size_t i = 0; i < n; ++i) {
    Episode ep;
    ep.obj1 = get_obj();
    ep.obj2 = get_obj();
    ep.question = get_vec(d);
    auto tail = get_vec(6);
    ep.obj1.static_class = static_cast<std::size_t>(tail[0]);
    ep.obj1.dynamic_class = static_cast<std::size_t>(tail[1]);
    ep.obj2.static_class = static_cast<std::size_t>(tail[2]);
    ep.obj2.dynamic_class = static_cast<std::size_t>(tail[3]);
    ep.property = static_cast<std::size_t>(tail[4]);
    ep.label = static_cast<std::size_t>(tail[5]);
    ds.episodes.push_back(std::move(ep));
  }
  if (pos != buf.size())
    throw IoError("trailing bytes at byte offset " + std::to_string(pos));
  return ds;
}

// Checkpoints store a named, shaped parameter list; loading requires the
// exact same names and shapes, in order.
inline void write_checkpoint(const std::string& path, const ParamList& params) {
  nlohmann::json meta = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : params) {
    meta.push_back({{"name", name}, {"shape", t.shape()}});
    for (double v : t.data()) detail_io::put_f64(payload, v);
  }
  nlohmann::json header{{"version", kContainerVersion}, {"params", meta}};
  detail_io::write_file(path,
                        detail_io::make_container("RDCLCKPT", header, payload));
}

inline void read_checkpoint_into(const std::string& path, ParamList& params) {
  const std::string buf = detail_io::read_file(path);
  auto [header, offset] = detail_io::open_container(buf, "RDCLCKPT");
  const auto& meta = header.at("params");
  if (!meta.is_array() || meta.size() != params.size())
    throw IoError("checkpoint parameter count mismatch: file has " +
                  std::to_string(meta.size()) + ", model has " +
                  std::to_string(params.size()));
  std::size_t pos = offset;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = meta[i].at("name").get<std::string>();
    const Shape shape = meta[i].at("shape").get<Shape>();
    if (name != params[i].first)
      throw IoError("checkpoint parameter " + std::to_string(i) + " is '" +
                    name + "', model expects '" + params[i].first + "'");
    if (shape != params[i].second.shape())
      throw IoError("checkpoint shape mismatch for '" + name + "'");
    auto& dst = params[i].second.data_mut();
    for (auto& v : dst) {
      v = detail_io::get_f64(buf, pos);
      pos += 8;
    }
  }
  if (pos != buf.size())
    throw IoError("trailing bytes at byte offset " + std::to_string(pos));
}

}  // namespace rdcl
