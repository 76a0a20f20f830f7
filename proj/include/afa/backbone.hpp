// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen surrogate dual encoder. Each branch is a stack of residual FFN blocks
//
//   h_0 = input projection (image) or class-table row (text)
//   h_l = h_{l-1} + W2 gelu(W1 h_{l-1}) + inj_l(h_{l-1})
//   out = h_L / |h_L|
//
// where inj_l is the adapter output selected by the EncoderPath: nothing for
// Frozen, the shared LoRA at its configured sites for Affa, and the MoE
// adapter driven by router t for Abfa(t). Adapters are injected in parallel
// with the FFN, so zero up-projections reproduce the Frozen path bit for bit.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "afa/adapters.hpp"
#include "afa/error.hpp"
#include "afa/linalg.hpp"
#include "afa/tape.hpp"

namespace afa {

class EncoderPath {
 public:
  enum class Kind : std::uint8_t { Frozen, Affa, Abfa };

  static EncoderPath frozen() { return EncoderPath(Kind::Frozen, 0); }
  static EncoderPath affa() { return EncoderPath(Kind::Affa, 0); }
  static EncoderPath abfa(std::size_t task_id) { return EncoderPath(Kind::Abfa, task_id); }

  Kind kind() const { return kind_; }
  std::size_t task_id() const { return task_; }

  std::string to_string() const {
    switch (kind_) {
      case Kind::Frozen: return "frozen";
      case Kind::Affa: return "affa";
      case Kind::Abfa: return "abfa(" + std::to_string(task_) + ")";
    }
    return "?";
  }

  friend bool operator==(const EncoderPath&, const EncoderPath&) = default;

 private:
  EncoderPath(Kind k, std::size_t t) : kind_(k), task_(t) {}
  Kind kind_;
  std::size_t task_;
};

// Non-owning view of the adapters a forward pass may read.
struct AdapterSet {
  const AffaState* affa = nullptr;
  const MoEAdapterState* abfa = nullptr;
};

struct FfnBlock {
  Matrix w1;  // 4d x d
  Matrix w2;  // d x 4d
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

// Intermediates of one branch evaluation, enough to run the backward pass.
struct EncodeTrace {
  Branch branch = Branch::Image;
  EncoderPath path = EncoderPath::frozen();
  std::vector<Vector> hidden;   // h_0 .. h_L
  std::vector<Vector> pre_act;  // W1 h_{l-1} for l = 1..L
  Vector output;                // unit norm
  double hidden_norm = 0.0;     // |h_L|
  std::vector<std::size_t> routing;  // active experts per visited MoE site, in order
};

class FrozenDualEncoder {
 public:
  FrozenDualEncoder() = default;

  FrozenDualEncoder(std::size_t d_in, std::size_t d, std::size_t layers,
                    std::size_t n_classes_max, std::uint64_t seed)
      : d_in_(d_in), d_(d), seed_(seed) {
    require(d_in >= 1 && d >= 1 && n_classes_max >= 1,
            "build_encoder: d_in, d and n_classes_max must be positive");
    Rng root(seed);
    Rng proj_rng = root.split(1);
    Rng text_rng = root.split(2);
    image_proj_ = init(d, d_in, d_in, proj_rng);
    text_table_ = init(n_classes_max, d, d, text_rng);
    for (std::size_t l = 0; l < layers; ++l) {
      Rng img = root.split(100 + l);
      Rng txt = root.split(200 + l);
      image_blocks_.push_back({init(4 * d, d, d, img), init(d, 4 * d, 4 * d, img)});
      text_blocks_.push_back({init(4 * d, d, d, txt), init(d, 4 * d, 4 * d, txt)});
    }
  }

  std::size_t input_dim() const { return d_in_; }
  std::size_t dim() const { return d_; }
  std::size_t layers() const { return image_blocks_.size(); }
  std::size_t class_capacity() const { return text_table_.rows(); }
  std::uint64_t seed() const { return seed_; }

  const Matrix& image_proj() const { return image_proj_; }
  const Matrix& text_table() const { return text_table_; }
  const std::vector<FfnBlock>& blocks(Branch b) const {
    return b == Branch::Image ? image_blocks_ : text_blocks_;
  }

  // FNV-1a over every weight byte.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const Matrix& m) {
      for (double x : m.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        for (int i = 0; i < 8; ++i) {
          h ^= (bits >> (8 * i)) & 0xFFu;
          h *= 1099511628211ull;
        }
      }
    };
    mix(image_proj_);
    mix(text_table_);
    for (const auto& b : image_blocks_) { mix(b.w1); mix(b.w2); }
    for (const auto& b : text_blocks_) { mix(b.w1); mix(b.w2); }
    return h;
  }

 private:
  static Matrix init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    Matrix m = gaussian_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    round_to_f32(m);
    return m;
  }

  std::size_t d_in_ = 0;
  std::size_t d_ = 0;
  std::uint64_t seed_ = 0;
  Matrix image_proj_;
  Matrix text_table_;
  std::vector<FfnBlock> image_blocks_;
  std::vector<FfnBlock> text_blocks_;
};

inline FrozenDualEncoder build_encoder(std::size_t d_in, std::size_t d, std::size_t layers,
                                       std::size_t n_classes_max, std::uint64_t seed) {
  return FrozenDualEncoder(d_in, d, layers, n_classes_max, seed);
}

namespace detail {

inline void check_path(const EncoderPath& path, const AdapterSet& adapters) {
  switch (path.kind()) {
    case EncoderPath::Kind::Frozen: return;
    case EncoderPath::Kind::Affa:
      require(adapters.affa != nullptr, "encoder: Affa path requires AFFA adapters");
      return;
    case EncoderPath::Kind::Abfa:
      require(adapters.abfa != nullptr, "encoder: Abfa path requires ABFA adapters");
      require(path.task_id() < adapters.abfa->task_count(),
              "encoder: Abfa path for untrained task " + std::to_string(path.task_id()) + " (" +
                  std::to_string(adapters.abfa->task_count()) + " routers)");
      return;
  }
}

}  // namespace detail

inline EncodeTrace encode_from_hidden(const FrozenDualEncoder& enc, Branch branch, Vector h0,
                                      const EncoderPath& path, const AdapterSet& adapters) {
  detail::check_path(path, adapters);
  EncodeTrace tr;
  tr.branch = branch;
  tr.path = path;
  const auto& blocks = enc.blocks(branch);
  tr.hidden.reserve(blocks.size() + 1);
  tr.hidden.push_back(std::move(h0));
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const Vector& h = tr.hidden.back();
    Vector u = matvec(blocks[l].w1, h);
    Vector a(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) a[i] = gelu(u[i]);
    Vector next = matvec(blocks[l].w2, a);
    axpy(1.0, h, next);
    if (path.kind() == EncoderPath::Kind::Affa) {
      if (const LoraAdapter* ad = adapters.affa->find(l, branch)) {
        axpy(1.0, lora_forward(*ad, h), next);
      }
    } else if (path.kind() == EncoderPath::Kind::Abfa) {
      if (const MoESite* site = adapters.abfa->find(l, branch)) {
        axpy(1.0,
             moe_forward_site(*site, adapters.abfa->top_k(), path.task_id(), h, &tr.routing),
             next);
      }
    }
    tr.pre_act.push_back(std::move(u));
    tr.hidden.push_back(std::move(next));
  }
  tr.hidden_norm = norm(tr.hidden.back());
  tr.output = normalize(tr.hidden.back());
  return tr;
}

inline EncodeTrace encode_image_traced(const FrozenDualEncoder& enc, std::span<const double> x,
                                       const EncoderPath& path, const AdapterSet& adapters) {
  require(x.size() == enc.input_dim(), "encode_image: input dim " + std::to_string(x.size()) +
                                           " != d_in " + std::to_string(enc.input_dim()));
  return encode_from_hidden(enc, Branch::Image, matvec(enc.image_proj(), x), path, adapters);
}

inline EncodeTrace encode_text_traced(const FrozenDualEncoder& enc, std::size_t class_id,
                                      const EncoderPath& path, const AdapterSet& adapters) {
  require(class_id < enc.class_capacity(),
          "encode_text: class_id " + std::to_string(class_id) + " out of range (capacity " +
              std::to_string(enc.class_capacity()) + ")");
  auto row = enc.text_table().row(class_id);
  return encode_from_hidden(enc, Branch::Text, Vector(row.begin(), row.end()), path, adapters);
}

inline Vector encode_image(const FrozenDualEncoder& enc, std::span<const double> x,
                           const EncoderPath& path, const AdapterSet& adapters = {}) {
  return encode_image_traced(enc, x, path, adapters).output;
}

inline Vector encode_text(const FrozenDualEncoder& enc, std::size_t class_id,
                          const EncoderPath& path, const AdapterSet& adapters = {}) {
  return encode_text_traced(enc, class_id, path, adapters).output;
}

// Back-propagates dL/d(output) through the branch, accumulating into every
// adapter parameter tracked by the tape. Backbone weights receive nothing.
inline void backward_encode(const FrozenDualEncoder& enc, const EncodeTrace& tr,
                            std::span<const double> grad_output, const AdapterSet& adapters,
                            GradientTape& tape) {
  const auto& blocks = enc.blocks(tr.branch);
  // Normalization: d(h/|h|) = (I - y y^T) / |h|.
  const double proj = dot(tr.output, grad_output);
  Vector dh(grad_output.size());
  for (std::size_t i = 0; i < dh.size(); ++i) {
    dh[i] = (grad_output[i] - tr.output[i] * proj) / tr.hidden_norm;
  }
  for (std::size_t l = blocks.size(); l-- > 0;) {
    const Vector& h = tr.hidden[l];
    const Vector& u = tr.pre_act[l];
    Vector s = matvec_transposed(blocks[l].w2, dh);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= gelu_derivative(u[i]);
    Vector dprev = dh;
    axpy(1.0, matvec_transposed(blocks[l].w1, s), dprev);
    if (tr.path.kind() == EncoderPath::Kind::Affa) {
      if (const LoraAdapter* ad = adapters.affa->find(l, tr.branch)) {
        axpy(1.0, lora_backward(*ad, h, dh, &tape), dprev);
      }
    } else if (tr.path.kind() == EncoderPath::Kind::Abfa) {
      if (const MoESite* site = adapters.abfa->find(l, tr.branch)) {
        axpy(1.0,
             moe_backward_site(*site, adapters.abfa->top_k(), tr.path.task_id(), h, dh, &tape),
             dprev);
      }
    }
    dh = std::move(dprev);
  }
}

}  // namespace afa
