#include <json.hpp>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lgt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lgt {

// Checkpoint directory layout: manifest.json plus one raw little-endian
// float32 blob per tensor (named by parameter path) and per memory bank.
// Writes go to a sibling tmp directory that is renamed into place, so an
// interrupted save never damages an existing checkpoint.

class CheckpointCodec {
 public:
  static void save(const Trainer& t, const std::string& dir);
  static Trainer load(const std::string& dir, bool force);
  static uint64_t stored_digest(const std::string& dir);

 private:
  static uint32_t write_blob(const fs::path& file, const float* data, size_t count);
  static std::vector<float> read_blob(const fs::path& file, size_t count, uint32_t expect_crc);
};

namespace {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json manifest_of(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("checkpoint manifest missing: " + (dir / "manifest.json").string());
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint manifest unreadable: ") + e.what());
  }
  return m;
}

}  // namespace

uint32_t CheckpointCodec::write_blob(const fs::path& file, const float* data, size_t count) {
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint blob: " + file.string());
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
  if (!f) throw IoError("short write on checkpoint blob: " + file.string());
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(count * 4)));
}

std::vector<float> CheckpointCodec::read_blob(const fs::path& file, size_t count,
                                              uint32_t expect_crc) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("missing checkpoint blob: " + file.string());
  std::vector<float> out(count);
  f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * 4));
  if (f.gcount() != static_cast<std::streamsize>(count * 4))
    throw IoError("truncated checkpoint blob: " + file.string());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(count * 4)));
  if (crc != expect_crc)
    throw IoError("checkpoint integrity failure (crc mismatch) in " + file.string());
  return out;
}

void CheckpointCodec::save(const Trainer& t, const std::string& dir_str) {
  fs::path dir(dir_str);
  fs::path tmp = dir;
  tmp += ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "tensors");
  fs::create_directories(tmp / "banks");

  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["iteration"] = t.iteration_;
  manifest["config"] = t.cfg_.canonical_json();
  manifest["config_digest"] = hex64(t.cfg_.digest());
  manifest["rng"] = {{"kind", "counter"}, {"seed", t.cfg_.seed}};
  manifest["opt"] = {{"g_t", t.opt_g_.t}, {"d_t", t.opt_d_.t}};

  json tensors = json::array();
  auto dump_tensor = [&](const std::string& name, const Tensor<float>& v) {
    fs::path file = tmp / "tensors" / (name + ".bin");
    uint32_t crc = write_blob(file, v.data(), static_cast<size_t>(v.numel()));
    tensors.push_back({{"name", name},
                       {"shape", v.dims()},
                       {"crc32", crc},
                       {"file", "tensors/" + name + ".bin"}});
  };
  for (const auto& p : t.params_.paths()) dump_tensor(p, t.params_.at(p)->val);
  for (const auto& p : t.momentum_.paths()) dump_tensor("momentum." + p, t.momentum_.at(p)->val);
  for (size_t i = 0; i < t.opt_g_.paths.size(); ++i) {
    dump_tensor("opt.g.m." + t.opt_g_.paths[i], t.opt_g_.m[i]);
    dump_tensor("opt.g.v." + t.opt_g_.paths[i], t.opt_g_.v[i]);
  }
  for (size_t i = 0; i < t.opt_d_.paths.size(); ++i) {
    dump_tensor("opt.d.m." + t.opt_d_.paths[i], t.opt_d_.m[i]);
    dump_tensor("opt.d.v." + t.opt_d_.paths[i], t.opt_d_.v[i]);
  }
  manifest["tensors"] = tensors;

  json banks = json::array();
  auto dump_bank = [&](const char* scope, int stage, const MemoryBank<float>& b) {
    std::string name = std::string(scope) + "_s" + std::to_string(stage + 1);
    fs::path file = tmp / "banks" / (name + ".bin");
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(b.size() * std::max<int64_t>(b.dim(), 0)));
    for (const auto& k : b.entries()) flat.insert(flat.end(), k.vec().begin(), k.vec().end());
    uint32_t crc = write_blob(file, flat.data(), flat.size());
    banks.push_back({{"scope", scope},
                     {"stage", stage + 1},
                     {"count", b.size()},
                     {"dim", b.dim()},
                     {"capacity", b.capacity()},
                     {"crc32", crc},
                     {"file", "banks/" + name + ".bin"}});
  };
  for (size_t i = 0; i < t.banks_.global_banks.size(); ++i)
    dump_bank("global", static_cast<int>(i), t.banks_.global_banks[i]);
  for (size_t i = 0; i < t.banks_.local_banks.size(); ++i)
    dump_bank("local", static_cast<int>(i), t.banks_.local_banks[i]);
  manifest["banks"] = banks;

  {
    std::ofstream f(tmp / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint manifest");
    f << manifest.dump(1) << "\n";
  }

  // Swap into place.
  fs::path old = dir;
  old += ".old";
  fs::remove_all(old, ec);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old, ec);
}

uint64_t CheckpointCodec::stored_digest(const std::string& dir) {
  json m = manifest_of(dir);
  return std::stoull(m.at("config_digest").get<std::string>(), nullptr, 16);
}

Trainer CheckpointCodec::load(const std::string& dir_str, bool force) {
  fs::path dir(dir_str);
  json m = manifest_of(dir);
  const std::string version = m.at("format_version").get<std::string>();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint format version mismatch: found '" + version + "', expected '" +
                  kCheckpointVersion + "'");

  TrainConfig cfg = TrainConfig::from_json_text(m.at("config").get<std::string>());
  const uint64_t stored = std::stoull(m.at("config_digest").get<std::string>(), nullptr, 16);
  if (cfg.digest() != stored && !force)
    throw ConfigError("checkpoint config digest mismatch (use force to override)");

  Trainer t(cfg);
  t.iteration_ = m.at("iteration").get<int64_t>();
  t.opt_g_.t = m.at("opt").at("g_t").get<int64_t>();
  t.opt_d_.t = m.at("opt").at("d_t").get<int64_t>();

  std::map<std::string, json> by_name;
  for (const auto& e : m.at("tensors")) by_name[e.at("name").get<std::string>()] = e;

  auto load_into = [&](const std::string& name, Tensor<float>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing tensor: " + name);
    auto shape = it->second.at("shape").get<std::vector<int64_t>>();
    check_shape(shape == dst.dims(), "checkpoint tensor shape mismatch for " + name);
    auto data = read_blob(dir / it->second.at("file").get<std::string>(),
                          static_cast<size_t>(dst.numel()),
                          it->second.at("crc32").get<uint32_t>());
    std::copy(data.begin(), data.end(), dst.data());
  };

  for (const auto& p : t.params_.paths()) load_into(p, t.params_.at(p)->val);
  for (const auto& p : t.momentum_.paths()) load_into("momentum." + p, t.momentum_.at(p)->val);
  for (size_t i = 0; i < t.opt_g_.paths.size(); ++i) {
    load_into("opt.g.m." + t.opt_g_.paths[i], t.opt_g_.m[i]);
    load_into("opt.g.v." + t.opt_g_.paths[i], t.opt_g_.v[i]);
  }
  for (size_t i = 0; i < t.opt_d_.paths.size(); ++i) {
    load_into("opt.d.m." + t.opt_d_.paths[i], t.opt_d_.m[i]);
    load_into("opt.d.v." + t.opt_d_.paths[i], t.opt_d_.v[i]);
  }

  for (const auto& e : m.at("banks")) {
    const std::string scope = e.at("scope").get<std::string>();
    const int stage = e.at("stage").get<int>() - 1;
    const int64_t count = e.at("count").get<int64_t>();
    const int64_t d = e.at("dim").get<int64_t>();
    const int64_t cap = e.at("capacity").get<int64_t>();
    auto& bank = scope == "global" ? t.banks_.global_banks.at(static_cast<size_t>(stage))
                                   : t.banks_.local_banks.at(static_cast<size_t>(stage));
    std::deque<Tensor<float>> entries;
    if (count > 0) {
      auto flat = read_blob(dir / e.at("file").get<std::string>(),
                            static_cast<size_t>(count * d), e.at("crc32").get<uint32_t>());
      for (int64_t i = 0; i < count; ++i) {
        Tensor<float> k({d});
        std::copy_n(flat.begin() + i * d, d, k.data());
        entries.push_back(std::move(k));
      }
    }
    bank.restore(cap, count > 0 ? d : -1, std::move(entries));
  }
  return t;
}

void Trainer::save_checkpoint(const std::string& dir) const { CheckpointCodec::save(*this, dir); }

Trainer Trainer::load_checkpoint(const std::string& dir, bool force) {
  return CheckpointCodec::load(dir, force);
}

uint64_t Trainer::stored_config_digest(const std::string& dir) {
  return CheckpointCodec::stored_digest(dir);
}

}  // namespace lgt
