#include "lesionnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "lesionnet/error.hpp"

namespace lesionnet {
namespace {

using nlohmann::json;

[[noreturn]] void format_error(const std::string& what) {
  fail(ErrorKind::kIo, "checkpoint: " + what);
}

json shape_json(const Shape& s) { return json(s.dims()); }

json layer_json(const LayerSpec& s) {
  json j;
  j["kind"] = to_string(s.kind);
  switch (s.kind) {
    case LayerKind::kConv:
      j["units"] = s.units;
      j["kernel"] = {s.kernel_h, s.kernel_w};
      j["stride"] = s.stride;
      break;
    case LayerKind::kDense:
      j["units"] = s.units;
      break;
    case LayerKind::kMaxPool:
      j["window"] = s.window;
      j["stride"] = s.stride;
      break;
    case LayerKind::kGlobalPool:
      j["mode"] = s.pool_mode == PoolMode::kMax ? "max" : "average";
      break;
    case LayerKind::kDropout:
      j["rate"] = s.rate;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::kConv: {
      s.units = j.at("units").get<std::size_t>();
      const json& k = j.at("kernel");
      if (k.is_array()) {
        s.kernel_h = k.at(0).get<std::size_t>();
        s.kernel_w = k.at(1).get<std::size_t>();
      } else {
        s.kernel_h = s.kernel_w = k.get<std::size_t>();
      }
      s.stride = j.value("stride", std::size_t{1});
      break;
    }
    case LayerKind::kDense:
      s.units = j.at("units").get<std::size_t>();
      break;
    case LayerKind::kMaxPool:
      s.window = j.value("window", std::size_t{2});
      s.stride = j.value("stride", std::size_t{2});
      break;
    case LayerKind::kGlobalPool: {
      const std::string mode = j.value("mode", std::string("average"));
      if (mode == "max") {
        s.pool_mode = PoolMode::kMax;
      } else if (mode != "average") {
        fail(ErrorKind::kInvalidArgument, "globalpool mode must be 'average' or 'max'");
      }
      break;
    }
    case LayerKind::kDropout:
      s.rate = j.value("rate", 0.5);
      break;
    default:
      break;
  }
  s.validate();
  return s;
}

json config_json(const ArchConfig& c) {
  json layers = json::array();
  for (const auto& l : c.layers) layers.push_back(layer_json(l));
  return {{"input_shape", shape_json(c.input_shape)},
          {"layers", layers},
          {"num_classes", c.num_classes}};
}

ArchConfig config_from_json(const json& j) {
  ArchConfig c;
  c.input_shape = Shape(j.at("input_shape").get<std::vector<std::size_t>>());
  for (const json& l : j.at("layers")) c.layers.push_back(layer_from_json(l));
  c.num_classes = j.at("num_classes").get<std::size_t>();
  infer_shapes(c);
  return c;
}

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string arch_to_json(const ArchConfig& config) { return config_json(config).dump(2); }

ArchConfig arch_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("architecture JSON: ") + e.what());
  }
}

std::string encode_checkpoint(const ModelState& model) {
  model.validate();
  json header;
  header["config"] = config_json(model.config);
  json classes = json::array();
  for (std::size_t i = 0; i < model.classes.size(); ++i) {
    classes.push_back({{"code", model.classes[i].code}, {"name", model.classes[i].display_name}});
  }
  header["classes"] = classes;
  header["frozen"] = model.frozen;
  header["init_seed"] = model.init_seed;
  json tensors = json::array();
  for (const auto& t : model.params) tensors.push_back(shape_json(t.shape()));
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32_le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : model.params) {
    for (float v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      put_u32_le(out, bits);
    }
  }
  return out;
}

ModelState decode_checkpoint(const std::string& bytes) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    format_error("bad magic (not a LSNCKPT1 file)");
  }
  if (bytes.size() < 12) format_error("truncated header");
  const std::uint32_t len = get_u32_le(raw + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) format_error("truncated header JSON");

  ModelState model;
  json header;
  try {
    header = json::parse(bytes.substr(12, len));
    model.config = config_from_json(header.at("config"));
    std::vector<ClassInfo> classes;
    for (const json& c : header.at("classes")) {
      classes.push_back({c.at("code").get<std::string>(), c.at("name").get<std::string>()});
    }
    model.classes = ClassCatalog(std::move(classes));
    model.frozen = header.at("frozen").get<std::vector<bool>>();
    model.init_seed = header.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    format_error(std::string("malformed header: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::kConsistency, std::string("checkpoint: ") + e.what());
  }

  const std::vector<Shape> expected = parameter_shapes(model.config);
  std::vector<Shape> declared_shapes;
  try {
    for (const json& t : header.at("tensors")) {
      declared_shapes.emplace_back(t.get<std::vector<std::size_t>>());
    }
  } catch (const json::exception& e) {
    format_error(std::string("malformed tensor list: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::kConsistency, std::string("checkpoint: ") + e.what());
  }
  if (declared_shapes.size() != expected.size()) {
    fail(ErrorKind::kConsistency, "checkpoint: tensor count does not match topology");
  }
  std::size_t offset = 12 + static_cast<std::size_t>(len);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const Shape& declared = declared_shapes[i];
    if (declared != expected[i]) {
      fail(ErrorKind::kConsistency, "checkpoint: tensor " + std::to_string(i) + " has shape " +
                                        declared.to_string() + ", topology needs " +
                                        expected[i].to_string());
    }
    const std::size_t n = declared.numel();
    if (bytes.size() < offset + 4 * n) format_error("truncated parameter payload");
    std::vector<float> values(n);
    for (std::size_t e = 0; e < n; ++e) {
      values[e] = std::bit_cast<float>(get_u32_le(raw + offset + 4 * e));
    }
    offset += 4 * n;
    model.params.emplace_back(declared, std::move(values));
  }
  if (offset != bytes.size()) format_error("trailing bytes after parameter payload");
  model.validate();
  return model;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, path.string() + ": write failed");
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, path.string() + ": cannot open checkpoint");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace lesionnet
