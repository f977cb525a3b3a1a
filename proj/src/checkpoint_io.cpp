#include "fmm/checkpoint_io.hpp"

#include <cmath>

#include "fmm/error.hpp"
#include "fmm/io.hpp"

namespace fmm {

namespace {
constexpr std::string_view kMagic = "FMMCKPT1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                     {"num_layers", c.num_layers},   {"hidden_dim", c.hidden_dim},
                     {"num_heads", c.num_heads},     {"ffn_dim", c.ffn_dim},
                     {"num_classes", c.num_classes}, {"pad_token_id", c.pad_token_id},
                     {"cls_token_id", c.cls_token_id}, {"mask_token_id", c.mask_token_id},
                     {"seed", c.seed},               {"init_std", c.init_std},
                     {"layer_norm", c.layer_norm}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.pad_token_id = j.value("pad_token_id", d.pad_token_id);
  c.cls_token_id = j.value("cls_token_id", d.cls_token_id);
  c.mask_token_id = j.value("mask_token_id", d.mask_token_id);
  c.seed = j.value("seed", d.seed);
  c.init_std = j.value("init_std", d.init_std);
  c.layer_norm = j.value("layer_norm", d.layer_norm);
}

std::string encode_checkpoint(const ModelCheckpoint& model, const nlohmann::json& extra) {
  nlohmann::json header;
  header["format"] = "fmm.checkpoint";
  header["version"] = kVersion;
  header["config"] = model.config();
  header["metadata"] = {{"epoch", model.metadata.epoch},
                        {"seed", model.metadata.seed},
                        {"strategy", model.metadata.strategy}};
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : model.layout().tensors) {
    header["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  if (!extra.is_null()) header["extra"] = extra;
  const std::string text = header.dump();

  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u64(text.size());
  w.raw(text);
  const auto params = model.parameters();
  for (const auto& t : model.layout().tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name);
    w.u64(t.size());
    w.f64s(params.subspan(t.offset, t.size()));
  }
  return w.bytes();
}

ModelCheckpoint decode_checkpoint(const std::string& bytes, nlohmann::json* extra) {
  io::ByteReader r(bytes);
  if (r.raw(kMagic.size()) != kMagic) throw FormatError("not a checkpoint file");
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version");
  const auto header_len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.raw(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  ModelCheckpoint model(header.at("config").get<ModelConfig>());
  const auto& meta = header.at("metadata");
  model.metadata.epoch = meta.at("epoch").get<int>();
  model.metadata.seed = meta.at("seed").get<std::uint64_t>();
  model.metadata.strategy = meta.at("strategy").get<std::string>();
  if (extra != nullptr) *extra = header.value("extra", nlohmann::json());

  auto params = model.mutable_parameters();
  for (const auto& t : model.layout().tensors) {
    const auto name_len = r.u32();
    if (r.raw(name_len) != t.name) throw FormatError("tensor order mismatch at " + t.name);
    if (r.u64() != t.size()) throw FormatError("tensor size mismatch at " + t.name);
    r.f64s(params.subspan(t.offset, t.size()));
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  for (double v : params) {
    if (!std::isfinite(v)) throw FormatError("checkpoint holds non-finite parameters");
  }
  return model;
}

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  io::atomic_write(path, encode_checkpoint(model, extra));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  return decode_checkpoint(io::read_file(path), extra);
}

}  // namespace fmm
