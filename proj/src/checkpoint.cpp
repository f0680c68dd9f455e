#include "xmsleep/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace xmsleep::diff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "xmsleep-checkpoint";
constexpr int kVersion = 1;

void append_f32(std::string& blob, std::span<const float> values) {
  const std::size_t start = blob.size();
  blob.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(blob.data() + start + i * 4, &bits, 4);
  }
}

std::vector<float> read_f32(const std::string& blob, std::size_t offset, std::size_t count,
                            const std::string& what) {
  if (offset + count * 4 > blob.size()) {
    throw FormatError("checkpoint blob truncated while reading '" + what + "' at offset " +
                      std::to_string(offset));
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + offset + i * 4, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json parse_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

json entry(const std::string& name, const Shape& shape, std::size_t offset) {
  return json{{"name", name}, {"shape", shape}, {"dtype", "f32"}, {"offset", offset}};
}

struct Entry {
  Shape shape;
  std::size_t offset;
};

std::map<std::string, Entry> entries_of(const json& list, const std::string& file) {
  std::map<std::string, Entry> out;
  for (const auto& e : list) {
    if (e.value("dtype", "") != "f32") throw FormatError(file + ": unsupported dtype");
    out[e.at("name").get<std::string>()] =
        Entry{e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>()};
  }
  return out;
}

}  // namespace

bool checkpoint_exists(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

void write_checkpoint(const fs::path& dir, const ModelParams<float>& params, const json& meta,
                      const AdamState* adam) {
  fs::create_directories(dir);
  std::string blob;
  json list = json::array();
  for (const auto& p : params) {
    list.push_back(entry(p.name, p.tensor.shape(), blob.size()));
    append_f32(blob, p.tensor.data());
  }
  json manifest{{"format", kFormat}, {"version", kVersion}, {"meta", meta},
                {"blob", "params.bin"},  {"params", list}};
  write_file(dir / "params.bin", blob);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  if (adam) {
    std::string ablob;
    json moments = json::array();
    for (const auto& p : params) {
      auto m = adam->m.find(p.name);
      auto v = adam->v.find(p.name);
      if (m == adam->m.end() || v == adam->v.end()) continue;
      moments.push_back(entry("m." + p.name, p.tensor.shape(), ablob.size()));
      append_f32(ablob, m->second);
      moments.push_back(entry("v." + p.name, p.tensor.shape(), ablob.size()));
      append_f32(ablob, v->second);
    }
    json aj{{"format", kFormat},          {"version", kVersion},
            {"step_count", adam->step_count}, {"lr", adam->lr},
            {"beta1", adam->beta1},       {"beta2", adam->beta2},
            {"eps", adam->eps},           {"weight_decay", adam->weight_decay},
            {"blob", "adam.bin"},         {"moments", moments}};
    write_file(dir / "adam.bin", ablob);
    write_file(dir / "adam.json", aj.dump(2) + "\n");
  }
}

json read_checkpoint_meta(const fs::path& dir) {
  if (!checkpoint_exists(dir)) throw StateError("checkpoint not found: " + dir.string());
  return parse_json(dir / "manifest.json").value("meta", json::object());
}

std::size_t load_checkpoint(const fs::path& dir, ModelParams<float>& params, LoadMode mode,
                            AdamState* adam) {
  if (!checkpoint_exists(dir)) throw StateError("checkpoint not found: " + dir.string());
  const json manifest = parse_json(dir / "manifest.json");
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw FormatError("manifest.json: unknown format or version");
  }
  const auto entries = entries_of(manifest.at("params"), "manifest.json");
  const std::string blob = read_file(dir / manifest.value("blob", "params.bin"));

  std::size_t loaded = 0;
  for (auto& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) {
      if (mode == LoadMode::Strict) throw StateError("checkpoint lacks parameter '" + p.name + "'");
      continue;
    }
    if (it->second.shape != p.tensor.shape()) {
      throw StateError("checkpoint shape " + shape_str(it->second.shape) + " for '" + p.name +
                       "' does not match model shape " + shape_str(p.tensor.shape()));
    }
    auto values = read_f32(blob, it->second.offset, p.tensor.numel(), p.name);
    std::copy(values.begin(), values.end(), p.tensor.data_mut().begin());
    ++loaded;
  }
  if (mode == LoadMode::Strict && loaded != entries.size()) {
    throw StateError("checkpoint has parameters unknown to the model");
  }

  if (adam) {
    const fs::path aj_path = dir / "adam.json";
    if (!fs::exists(aj_path)) throw StateError("checkpoint has no optimizer state");
    const json aj = parse_json(aj_path);
    const std::string ablob = read_file(dir / aj.value("blob", "adam.bin"));
    AdamState st;
    st.step_count = aj.at("step_count").get<std::uint64_t>();
    st.lr = aj.at("lr").get<double>();
    st.beta1 = aj.at("beta1").get<double>();
    st.beta2 = aj.at("beta2").get<double>();
    st.eps = aj.at("eps").get<double>();
    st.weight_decay = aj.at("weight_decay").get<double>();
    for (const auto& [name, e] : entries_of(aj.at("moments"), "adam.json")) {
      auto values = read_f32(ablob, e.offset, numel(e.shape), name);
      const std::string pname = name.substr(2);
      (name.starts_with("m.") ? st.m : st.v)[pname] = std::move(values);
    }
    *adam = std::move(st);
  }
  return loaded;
}

}  // namespace xmsleep::diff
