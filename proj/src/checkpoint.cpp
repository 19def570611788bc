#include "mvsum/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "mvsum/error.hpp"

namespace mvsum::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const model::ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"heads", c.heads},
          {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},   {"d_ff", c.d_ff},
          {"max_src_len", c.max_src_len}, {"max_tgt_len", c.max_tgt_len}, {"temperature", c.temperature},
          {"views", views::join_view_list(c.views)}, {"seed", c.seed},    {"init_std", c.init_std}};
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.dec_layers = j.at("dec_layers").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_src_len = j.at("max_src_len").get<std::size_t>();
  c.max_tgt_len = j.at("max_tgt_len").get<std::size_t>();
  c.temperature = j.at("temperature").get<double>();
  c.views = views::parse_view_list(j.at("views").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

void put_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save(const std::string& dir, const model::MultiViewModel<float>& m, const corpus::Vocab& vocab,
          const std::map<std::string, std::string>& metadata) {
  if (vocab.size() != m.config().vocab_size) throw Error("checkpoint: vocabulary size differs from model config");
  fs::create_directories(dir);
  json tensors = json::array();
  std::string blob;
  for (const auto& p : m.params()) {
    tensors.push_back({{"name", p.name}, {"shape", {p.value.rows, p.value.cols}}});
    for (float v : p.value.data) put_le(blob, v);
  }
  const auto& all = vocab.tokens();
  json manifest = {{"format", kFormat},
                   {"config", config_to_json(m.config())},
                   {"vocab", std::vector<std::string>(all.begin() + corpus::kNumSpecials, all.end())},
                   {"metadata", metadata},
                   {"tensors", std::move(tensors)}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(1) << '\n';
  std::ofstream bf(fs::path(dir) / "tensors.bin", std::ios::binary);
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!mf || !bf) throw Error("checkpoint: failed to write " + dir);
}

Loaded load(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw Error("checkpoint: cannot open " + (fs::path(dir) / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw FormatError("checkpoint: unsupported format tag");

  Loaded out;
  try {
    const auto tokens = manifest.at("vocab").get<std::vector<std::string>>();
    out.vocab = corpus::Vocab::from_tokens(tokens);
    out.model = std::make_unique<model::MultiViewModel<float>>(config_from_json(manifest.at("config")));
    out.metadata = manifest.value("metadata", std::map<std::string, std::string>{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (out.vocab.size() != out.model->config().vocab_size)
    throw FormatError("checkpoint: vocabulary size differs from config");

  const json& tensors = manifest.at("tensors");
  auto& params = out.model->params();
  if (tensors.size() != params.size())
    throw FormatError("checkpoint: manifest lists " + std::to_string(tensors.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  std::size_t expected = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = tensors[i].at("name").get<std::string>();
    const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
    if (name != params[i].name || shape.size() != 2 || shape[0] != params[i].value.rows ||
        shape[1] != params[i].value.cols)
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " ('" + name + "') does not match the model layout");
    expected += params[i].value.size() * 4;
  }

  std::ifstream bf(fs::path(dir) / "tensors.bin", std::ios::binary);
  if (!bf) throw Error("checkpoint: cannot open " + (fs::path(dir) / "tensors.bin").string());
  const std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  if (blob.size() != expected)
    throw FormatError("checkpoint: blob length mismatch (expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(blob.size()) + ")");
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (auto& p : params)
    for (float& v : p.value.data) {
      v = get_le(bytes);
      bytes += 4;
    }
  return out;
}

}  // namespace mvsum::checkpoint
