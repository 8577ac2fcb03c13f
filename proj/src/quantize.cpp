// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "loram/errors.hpp"

namespace loram {

namespace {

// Normal quantiles at evenly spaced probabilities, 8 on the positive side and
// 7 on the negative side, plus an exact zero, normalized to [-1, 1].
constexpr std::array<float, 16> kNf4 = {
    -1.0f,
    -0.6961929202079773f,
    -0.5250730514526367f,
    -0.39491748809814453f,
    -0.28444135189056396f,
    -0.18477343022823334f,
    -0.09104999154806137f,
    0.0f,
    0.07958032935857773f,
    0.16093017160892487f,
    0.24611228704452515f,
    0.33791518211364746f,
    0.44070979952812195f,
    0.5626169443130493f,
    0.7229567170143127f,
    1.0f,
};

constexpr std::array<float, 16> kInt4Sym = {
    -7.0f / 7, -6.0f / 7, -5.0f / 7, -4.0f / 7, -3.0f / 7, -2.0f / 7, -1.0f / 7, 0.0f,
    1.0f / 7,  2.0f / 7,  3.0f / 7,  4.0f / 7,  5.0f / 7,  6.0f / 7,  7.0f / 7,  0.0f,
};

std::uint8_t nearest_code(double x, const std::array<float, 16>& cb, int usable) {
  std::uint8_t best = 0;
  double best_d = std::abs(x - cb[0]);
  for (int i = 1; i < usable; ++i) {
    const double d = std::abs(x - cb[static_cast<std::size_t>(i)]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint8_t>(i);
    }
  }
  return best;
}

}  // namespace

std::string_view to_string(CodebookId id) { return id == CodebookId::kNf4 ? "nf4" : "int4sym"; }

CodebookId codebook_from_string(std::string_view s) {
  if (s == "nf4") return CodebookId::kNf4;
  if (s == "int4sym") return CodebookId::kInt4Sym;
  throw ConfigError("unknown codebook '" + std::string(s) + "' (nf4|int4sym)");
}

const std::array<float, 16>& codebook(CodebookId id) { return id == CodebookId::kNf4 ? kNf4 : kInt4Sym; }

int usable_codes(CodebookId id) { return id == CodebookId::kNf4 ? 16 : 15; }

std::uint8_t zero_code(CodebookId) { return 7; }

double max_half_gap(CodebookId id) {
  const auto& cb = codebook(id);
  double gap = 0;
  for (int i = 1; i < usable_codes(id); ++i) {
    gap = std::max(gap, double(cb[static_cast<std::size_t>(i)]) - double(cb[static_cast<std::size_t>(i - 1)]));
  }
  return gap / 2;
}

QuantizedTensor quantize(const MatrixF& w, int block_size, CodebookId id) {
  if (block_size < 1) throw ConfigError("quantization block size must be >= 1");
  QuantizedTensor q;
  q.rows = w.rows();
  q.cols = w.cols();
  q.block_size = block_size;
  q.codebook = id;
  const Index n = w.size();
  const Index blocks = (n + block_size - 1) / block_size;
  q.scales.assign(static_cast<std::size_t>(blocks), 0.0f);
  q.packed.assign(static_cast<std::size_t>((n + 1) / 2), 0);
  const auto& cb = codebook(id);
  const int usable = usable_codes(id);
  const float* data = w.data();
  for (Index b = 0; b < blocks; ++b) {
    const Index lo = b * block_size;
    const Index hi = std::min(n, lo + block_size);
    float scale = 0;
    for (Index i = lo; i < hi; ++i) scale = std::max(scale, std::abs(data[i]));
    if (!std::isfinite(scale)) throw NumericalError("quantize: non-finite weight in block " + std::to_string(b));
    q.scales[static_cast<std::size_t>(b)] = scale;
    for (Index i = lo; i < hi; ++i) {
      const std::uint8_t c = scale == 0.0f ? zero_code(id) : nearest_code(double(data[i]) / double(scale), cb, usable);
      q.packed[static_cast<std::size_t>(i / 2)] |= static_cast<std::uint8_t>(i % 2 == 0 ? c : c << 4);
    }
  }
  return q;
}

MatrixF dequantize(const QuantizedTensor& q) {
  const Index n = q.numel();
  if (static_cast<Index>(q.packed.size()) != (n + 1) / 2 ||
      static_cast<Index>(q.scales.size()) != (n + q.block_size - 1) / q.block_size) {
    throw ShapeError("dequantize: packed/scales sizes do not match shape " + std::to_string(q.rows) + "x" +
                     std::to_string(q.cols));
  }
  const auto& cb = codebook(q.codebook);
  MatrixF out(q.rows, q.cols);
  float* data = out.data();
  for (Index i = 0; i < n; ++i) data[i] = cb[q.code(i)] * q.scales[static_cast<std::size_t>(i / q.block_size)];
  return out;
}

TransformerWeights<float> QuantizedModel::materialize() const {
  TransformerWeights<float> w = dense;
  for (const auto& [name, q] : quantized) {
    MatrixF* t = w.find(name);
    if (t == nullptr) throw ShapeError("quantized tensor '" + name + "' has no slot in the model");
    *t = dequantize(q);
  }
  return w;
}

QuantizedModel quantize_model(const TransformerWeights<float>& w, int block_size, CodebookId id) {
  QuantizedModel qm;
  qm.dense = w;
  for (int l = 0; l < static_cast<int>(w.layers.size()); ++l) {
    for (TargetKind k : {TargetKind::kQ, TargetKind::kK, TargetKind::kV, TargetKind::kO, TargetKind::kUp,
                         TargetKind::kGate, TargetKind::kDown}) {
      const std::string name = target_name(l, k);
      MatrixF& slot = qm.dense.layers[static_cast<std::size_t>(l)].matrix(k);
      qm.quantized.emplace(name, quantize(slot, block_size, id));
      slot.resize(0, 0);
    }
  }
  return qm;
}

}  // namespace loram
