// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "loram/errors.hpp"

namespace loram {

namespace {

constexpr std::string_view kMagic = "LMCK1";
constexpr std::size_t kPrefix = 5 + 8;

std::size_t align8(std::size_t n) { return (n + 7) & ~std::size_t{7}; }

void put_u32(std::uint8_t* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

std::int64_t numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::int64_t expected_length(DType d, const std::vector<std::int64_t>& shape) {
  const std::int64_t n = numel(shape);
  switch (d) {
    case DType::kF32: return 4 * n;
    case DType::kU8: return n;
    case DType::kQ4: return (n + 1) / 2;
  }
  return -1;
}

DType dtype_from_string(std::string_view s) {
  if (s == "f32") return DType::kF32;
  if (s == "u8") return DType::kU8;
  if (s == "q4") return DType::kQ4;
  throw ArtifactError("container: unknown dtype '" + std::string(s) + "'");
}

std::string header_text(const std::vector<TensorRecord>& tensors, const nlohmann::json& metadata,
                        std::size_t payload_start, std::vector<std::size_t>* offsets) {
  nlohmann::json list = nlohmann::json::array();
  std::size_t pos = payload_start;
  if (offsets != nullptr) offsets->clear();
  for (const auto& t : tensors) {
    pos = align8(pos);
    nlohmann::json e = t.attrs;
    e["name"] = t.name;
    e["dtype"] = to_string(t.dtype);
    e["shape"] = t.shape;
    e["offset"] = pos;
    e["length"] = t.bytes.size();
    list.push_back(std::move(e));
    if (offsets != nullptr) offsets->push_back(pos);
    pos += t.bytes.size();
  }
  nlohmann::json h;
  h["tensors"] = std::move(list);
  h["metadata"] = metadata;
  return h.dump();
}

void require_kind(const Container& c, std::string_view kind) {
  const auto it = c.metadata.find("kind");
  if (it == c.metadata.end() || !it->is_string() || it->get<std::string>() != kind) {
    throw ArtifactError("container holds '" + (it == c.metadata.end() ? std::string("?") : it->dump()) +
                        "', expected '" + std::string(kind) + "'");
  }
}

std::string position_name(PositionEncoding p) { return p == PositionEncoding::kNone ? "none" : "sinusoidal"; }

}  // namespace

std::string_view to_string(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kU8: return "u8";
    case DType::kQ4: return "q4";
  }
  return "?";
}

void Container::add(TensorRecord r) {
  if (has(r.name)) throw ArtifactError("container: duplicate tensor '" + r.name + "'");
  tensors_.push_back(std::move(r));
}

void Container::add_f32(const std::string& name, const MatrixF& m) {
  TensorRecord r{name, DType::kF32, {m.rows(), m.cols()}, {}, nlohmann::json::object()};
  r.bytes.resize(static_cast<std::size_t>(m.size()) * 4);
  for (Index i = 0; i < m.size(); ++i) put_u32(r.bytes.data() + 4 * i, std::bit_cast<std::uint32_t>(m.data()[i]));
  add(std::move(r));
}

void Container::add_u8(const std::string& name, const PruneMask& m) {
  TensorRecord r{name, DType::kU8, {m.rows(), m.cols()}, {}, nlohmann::json::object()};
  r.bytes.assign(m.data(), m.data() + m.size());
  add(std::move(r));
}

void Container::add_q4(const std::string& name, const QuantizedTensor& q) {
  TensorRecord r{name, DType::kQ4, {q.rows, q.cols}, q.packed, nlohmann::json::object()};
  r.attrs["block_size"] = q.block_size;
  r.attrs["codebook"] = to_string(q.codebook);
  add(std::move(r));
  MatrixF scales(1, static_cast<Index>(q.scales.size()));
  std::copy(q.scales.begin(), q.scales.end(), scales.data());
  add_f32(name + ".scales", scales);
}

bool Container::has(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return true;
  }
  return false;
}

const TensorRecord& Container::record(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw ArtifactError("container: missing tensor '" + std::string(name) + "'");
}

MatrixF Container::f32(std::string_view name) const {
  const auto& r = record(name);
  if (r.dtype != DType::kF32 || r.shape.size() != 2) throw ArtifactError("container: '" + r.name + "' is not a 2-d f32 tensor");
  MatrixF m(r.shape[0], r.shape[1]);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(get_u32(r.bytes.data() + 4 * i));
  return m;
}

PruneMask Container::u8(std::string_view name) const {
  const auto& r = record(name);
  if (r.dtype != DType::kU8 || r.shape.size() != 2) throw ArtifactError("container: '" + r.name + "' is not a 2-d u8 tensor");
  PruneMask m(r.shape[0], r.shape[1]);
  std::copy(r.bytes.begin(), r.bytes.end(), m.data());
  return m;
}

QuantizedTensor Container::q4(std::string_view name) const {
  const auto& r = record(name);
  if (r.dtype != DType::kQ4 || r.shape.size() != 2) throw ArtifactError("container: '" + r.name + "' is not a q4 tensor");
  QuantizedTensor q;
  q.rows = r.shape[0];
  q.cols = r.shape[1];
  try {
    q.block_size = r.attrs.at("block_size").get<int>();
    q.codebook = codebook_from_string(r.attrs.at("codebook").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("container: q4 tensor '" + r.name + "' lacks block_size/codebook: " + e.what());
  }
  q.packed = r.bytes;
  const MatrixF scales = f32(std::string(name) + ".scales");
  q.scales.assign(scales.data(), scales.data() + scales.size());
  if (static_cast<Index>(q.scales.size()) != (q.numel() + q.block_size - 1) / q.block_size) {
    throw ArtifactError("container: q4 tensor '" + r.name + "' has the wrong number of scales");
  }
  return q;
}

std::string Container::serialize() const {
  // Offsets are absolute, so the header length depends on itself; iterate to a
  // fixed point and pad the header with spaces to land exactly on it.
  std::size_t start = align8(kPrefix + 2);
  std::vector<std::size_t> offsets;
  std::string header;
  for (int iter = 0; iter < 16; ++iter) {
    header = header_text(tensors_, metadata, start, &offsets);
    const std::size_t needed = align8(kPrefix + header.size());
    if (needed <= start) break;
    start = needed;
  }
  header.resize(start - kPrefix, ' ');

  std::string out(kMagic);
  std::uint64_t hlen = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(hlen >> (8 * i)));
  out += header;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    out.resize(offsets[i], '\0');
    out.append(reinterpret_cast<const char*>(tensors_[i].bytes.data()), tensors_[i].bytes.size());
  }
  return out;
}

Container Container::parse(std::string_view bytes) {
  if (bytes.size() < kPrefix || bytes.substr(0, 5) != kMagic) throw ArtifactError("not an LMCK1 container");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[5 + i])) << (8 * i);
  if (hlen > bytes.size() - kPrefix) throw ArtifactError("container header length exceeds file size");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(kPrefix, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("container header is not valid JSON: ") + e.what());
  }
  Container c;
  try {
    c.metadata = h.at("metadata");
    std::size_t prev_end = kPrefix + hlen;
    for (const auto& e : h.at("tensors")) {
      TensorRecord r;
      r.name = e.at("name").get<std::string>();
      r.dtype = dtype_from_string(e.at("dtype").get<std::string>());
      r.shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (offset < prev_end || offset % 8 != 0 || length > bytes.size() || offset > bytes.size() - length) {
        throw ArtifactError("container: tensor '" + r.name + "' has an invalid byte range");
      }
      if (static_cast<std::int64_t>(length) != expected_length(r.dtype, r.shape)) {
        throw ArtifactError("container: tensor '" + r.name + "' length does not match its shape");
      }
      for (const auto& [k, v] : e.items()) {
        if (k != "name" && k != "dtype" && k != "shape" && k != "offset" && k != "length") r.attrs[k] = v;
      }
      r.bytes.assign(reinterpret_cast<const std::uint8_t*>(bytes.data()) + offset,
                     reinterpret_cast<const std::uint8_t*>(bytes.data()) + offset + length);
      prev_end = offset + length;
      c.add(std::move(r));
    }
    if (prev_end != bytes.size() && !c.tensors_.empty()) throw ArtifactError("container: trailing bytes after last tensor");
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("container header is malformed: ") + e.what());
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const std::string data = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArtifactError("cannot write " + path.string());
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw ArtifactError("failed writing " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const ModelConfig& c) {
  std::vector<std::string> targets;
  for (auto k : c.lora_targets) targets.emplace_back(to_string(k));
  j = nlohmann::json{{"n_layers", c.n_layers},   {"d_model", c.d_model},       {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},           {"vocab", c.vocab},           {"max_seq", c.max_seq},
                     {"lora_rank", c.lora_rank}, {"lora_alpha", c.lora_alpha}, {"lora_dropout", c.lora_dropout},
                     {"lora_targets", targets},  {"position", position_name(c.position)},
                     {"norm_eps", c.norm_eps},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n_layers").get_to(c.n_layers);
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("vocab").get_to(c.vocab);
  j.at("max_seq").get_to(c.max_seq);
  j.at("lora_rank").get_to(c.lora_rank);
  j.at("lora_alpha").get_to(c.lora_alpha);
  j.at("lora_dropout").get_to(c.lora_dropout);
  c.lora_targets.clear();
  for (const auto& t : j.at("lora_targets")) c.lora_targets.push_back(target_kind_from_string(t.get<std::string>()));
  c.position = j.at("position").get<std::string>() == "none" ? PositionEncoding::kNone : PositionEncoding::kSinusoidal;
  j.at("norm_eps").get_to(c.norm_eps);
  j.at("seed").get_to(c.seed);
}

namespace {

ModelConfig config_of(const Container& c) {
  try {
    return c.metadata.at("model_config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("container lacks a valid model_config: ") + e.what());
  }
}

}  // namespace

Container model_container(const TransformerWeights<float>& w) {
  Container c;
  c.metadata["kind"] = "model";
  c.metadata["model_config"] = w.config;
  w.for_each([&](const std::string& name, const MatrixF& m) { c.add_f32(name, m); });
  return c;
}

TransformerWeights<float> load_model(const Container& c) {
  if (is_quantized(c)) return load_quantized(c).materialize();
  require_kind(c, "model");
  TransformerWeights<float> w = init_model(config_of(c));
  w.for_each([&](const std::string& name, MatrixF& m) { m = c.f32(name); });
  w.check_shapes();
  return w;
}

Container quantized_container(const QuantizedModel& q) {
  Container c;
  c.metadata["kind"] = "quantized_model";
  c.metadata["model_config"] = q.dense.config;
  nlohmann::json books;
  for (CodebookId id : {CodebookId::kNf4, CodebookId::kInt4Sym}) {
    const auto& cb = codebook(id);
    books[std::string(to_string(id))] = std::vector<float>(cb.begin(), cb.end());
  }
  c.metadata["codebooks"] = books;
  q.dense.for_each([&](const std::string& name, const MatrixF& m) {
    const auto it = q.quantized.find(name);
    if (it != q.quantized.end()) {
      c.add_q4(name, it->second);
    } else {
      c.add_f32(name, m);
    }
  });
  return c;
}

bool is_quantized(const Container& c) {
  const auto it = c.metadata.find("kind");
  return it != c.metadata.end() && *it == "quantized_model";
}

QuantizedModel load_quantized(const Container& c) {
  require_kind(c, "quantized_model");
  QuantizedModel q;
  q.dense = init_model(config_of(c));
  q.dense.for_each([&](const std::string& name, MatrixF& m) {
    if (c.record(name).dtype == DType::kQ4) {
      q.quantized.emplace(name, c.q4(name));
      m.resize(0, 0);
    } else {
      m = c.f32(name);
    }
  });
  q.materialize().check_shapes();
  return q;
}

Container adapters_container(const AdapterSet<float>& a, const ModelConfig& cfg) {
  Container c;
  c.metadata["kind"] = "adapters";
  c.metadata["model_config"] = cfg;
  nlohmann::json scaling = nlohmann::json::object();
  for (const auto& [name, ad] : a) {
    c.add_f32(name + ".lora_b", ad.b);
    c.add_f32(name + ".lora_a", ad.a);
    scaling[name] = ad.scaling;
  }
  c.metadata["scaling"] = scaling;
  return c;
}

AdapterSet<float> load_adapters(const Container& c) {
  require_kind(c, "adapters");
  AdapterSet<float> out;
  for (const auto& [name, s] : c.metadata.at("scaling").items()) {
    LoraAdapter<float> ad{name, c.f32(name + ".lora_b"), c.f32(name + ".lora_a"), s.get<double>()};
    if (ad.b.cols() != ad.a.rows()) throw ArtifactError("adapter '" + name + "' has inconsistent rank");
    out.emplace(name, std::move(ad));
  }
  return out;
}

Container masks_container(const MaskSet& m) {
  Container c;
  c.metadata["kind"] = "masks";
  for (const auto& [name, mask] : m) c.add_u8(name, mask);
  return c;
}

MaskSet load_masks(const Container& c) {
  require_kind(c, "masks");
  MaskSet out;
  for (const auto& t : c.tensors()) out.emplace(t.name, c.u8(t.name));
  for (const auto& [name, m] : out) {
    if (((m.array() != 0) && (m.array() != 1)).any()) throw ArtifactError("mask '" + name + "' has entries outside {0,1}");
  }
  return out;
}

Container plan_container(const StructuredPlan& p) {
  Container c;
  c.metadata["kind"] = "plan";
  c.metadata["plan"] = p;
  return c;
}

StructuredPlan load_plan(const Container& c) {
  require_kind(c, "plan");
  try {
    return c.metadata.at("plan").get<StructuredPlan>();
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("plan container is malformed: ") + e.what());
  }
}

Container recovered_container(const RecoveredDelta& d, const ModelConfig& cfg) {
  Container c = adapters_container(d.factors, cfg);
  c.metadata["kind"] = "recovered";
  for (const auto& [name, m] : d.support) c.add_u8(name + ".support", m);
  return c;
}

RecoveredDelta load_recovered(const Container& c) {
  require_kind(c, "recovered");
  Container as_adapters = c;
  as_adapters.metadata["kind"] = "adapters";
  RecoveredDelta d;
  d.factors = load_adapters(as_adapters);
  for (const auto& [name, ad] : d.factors) {
    if (c.has(name + ".support")) d.support.emplace(name, c.u8(name + ".support"));
  }
  return d;
}

std::uint64_t payload_hash(const Container& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : c.tensors()) {
    for (auto b : t.bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace loram
