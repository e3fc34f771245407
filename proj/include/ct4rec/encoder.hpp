// Copyright 2026 The ct4rec Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ct4rec/corpus.hpp"
#include "ct4rec/tensor.hpp"

namespace ct4rec {

struct EncoderConfig {
  int embed_dim = 50;
  int n_layers = 2;
  int n_heads = 2;
  int max_seq_len = 50;
  double dropout_rate = 0.5;
  int ffn_dim = 0;  // 0 means embed_dim

  int ffn() const { return ffn_dim > 0 ? ffn_dim : embed_dim; }
  int head_dim() const { return embed_dim / n_heads; }
  void validate() const;
};

template <class T>
struct LayerParams {
  Matrix<T> ln1_scale, ln1_offset;    // [1 x d]
  Matrix<T> query, key, value, output;  // [d x d], applied as x * W
  Matrix<T> ln2_scale, ln2_offset;    // [1 x d]
  Matrix<T> ffn_in, ffn_in_bias;      // [d x f], [1 x f]
  Matrix<T> ffn_out, ffn_out_bias;    // [f x d], [1 x d]

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "ln1.scale", self.ln1_scale);
    f(prefix + "ln1.offset", self.ln1_offset);
    f(prefix + "attn.query", self.query);
    f(prefix + "attn.key", self.key);
    f(prefix + "attn.value", self.value);
    f(prefix + "attn.output", self.output);
    f(prefix + "ln2.scale", self.ln2_scale);
    f(prefix + "ln2.offset", self.ln2_offset);
    f(prefix + "ffn.in", self.ffn_in);
    f(prefix + "ffn.in_bias", self.ffn_in_bias);
    f(prefix + "ffn.out", self.ffn_out);
    f(prefix + "ffn.out_bias", self.ffn_out_bias);
  }
};

/// All trainable tensors. Item embeddings have catalog_size + 2 rows: row 0
/// is padding (always zero) and the last row is the mask token. The same
/// table embeds inputs and scores candidates.
template <class T>
struct ParameterSet {
  Matrix<T> item_embeddings;        // [(|V| + 2) x d]
  Matrix<T> positional_embeddings;  // [L x d]
  std::vector<LayerParams<T>> layers;
  Matrix<T> final_ln_scale, final_ln_offset;

  int catalog_size() const { return static_cast<int>(item_embeddings.rows()) - 2; }
  int embed_dim() const { return static_cast<int>(item_embeddings.cols()); }

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t tensor_count() const;
  std::size_t parameter_count() const;
  ParameterSet zeros_like() const;
  void set_zero();
  /// this += other, tensor by tensor.
  void add(const ParameterSet& other);
  bool all_finite() const;

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    out.item_embeddings = item_embeddings.template cast<U>();
    out.positional_embeddings = positional_embeddings.template cast<U>();
    out.final_ln_scale = final_ln_scale.template cast<U>();
    out.final_ln_offset = final_ln_offset.template cast<U>();
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dst = out.layers[l];
      const auto& src = layers[l];
      dst.ln1_scale = src.ln1_scale.template cast<U>();
      dst.ln1_offset = src.ln1_offset.template cast<U>();
      dst.query = src.query.template cast<U>();
      dst.key = src.key.template cast<U>();
      dst.value = src.value.template cast<U>();
      dst.output = src.output.template cast<U>();
      dst.ln2_scale = src.ln2_scale.template cast<U>();
      dst.ln2_offset = src.ln2_offset.template cast<U>();
      dst.ffn_in = src.ffn_in.template cast<U>();
      dst.ffn_in_bias = src.ffn_in_bias.template cast<U>();
      dst.ffn_out = src.ffn_out.template cast<U>();
      dst.ffn_out_bias = src.ffn_out_bias.template cast<U>();
    }
    return out;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("item_embeddings"), self.item_embeddings);
    f(std::string("positional_embeddings"), self.positional_embeddings);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      LayerParams<T>::visit(self.layers[l], "layers." + std::to_string(l) + ".", f);
    }
    f(std::string("final_ln.scale"), self.final_ln_scale);
    f(std::string("final_ln.offset"), self.final_ln_offset);
  }
};

/// Truncated normal (sigma 0.02, cut at 2 sigma) weights, zero biases, unit
/// layer-norm scales. Deterministic per seed.
template <class T>
ParameterSet<T> init_params(const EncoderConfig& config, int catalog_size, std::uint64_t seed);

namespace detail {

template <class T>
struct LayerCache {
  Matrix<T> input;                 // residual stream entering the block
  Matrix<T> ln1_hat, ln1_out;      // normalized and affine outputs
  std::vector<T> ln1_rstd;
  Matrix<T> q, k, v;
  Matrix<T> probs;                 // [(B * H * L) x L], block (b, h) is softmax output
  Matrix<T> dropped;               // probs after dropout
  Matrix<T> prob_mask;             // empty when dropout is off
  Matrix<T> context;
  Matrix<T> mid;                   // input + attention output
  Matrix<T> ln2_hat, ln2_out;
  std::vector<T> ln2_rstd;
  Matrix<T> pre_act;               // ffn_in output before ReLU
  Matrix<T> hidden;                // post ReLU and dropout
  Matrix<T> hidden_mask;           // empty when dropout is off
};

template <class T>
struct ForwardCache {
  std::vector<ItemId> inputs;
  std::vector<std::uint8_t> key_valid;  // input != padding
  Matrix<T> embed_mask;                 // empty when dropout is off
  std::vector<LayerCache<T>> layers;
  Matrix<T> final_hat;
  std::vector<T> final_rstd;
};

}  // namespace detail

/// Output of one forward pass. Row b * L + t of `representations` is the
/// user representation after step t.
template <class T>
struct PassOutput {
  int batch_size = 0;
  int max_len = 0;
  int dropout_id = 1;
  Matrix<T> representations;  // [(B * L) x d], zero at padded steps
  std::shared_ptr<const detail::ForwardCache<T>> cache;

  std::span<const T> at(int b, int t) const {
    return row_span(representations, static_cast<Eigen::Index>(b) * max_len + t);
  }
};

/// Pre-norm causal self-attention encoder. With a dropout seed the pass is
/// stochastic (inverted dropout on the embedding output, the attention
/// probabilities and the FFN hidden layer); without one it is the
/// deterministic evaluation pass.
template <class T>
PassOutput<T> forward(const ParameterSet<T>& params, const EncoderConfig& config,
                      const SequenceBatch& batch, std::optional<std::uint64_t> dropout_seed,
                      int dropout_id = 1);

template <class T>
std::pair<PassOutput<T>, PassOutput<T>> forward_two_pass(const ParameterSet<T>& params,
                                                         const EncoderConfig& config,
                                                         const SequenceBatch& batch,
                                                         std::uint64_t seed1, std::uint64_t seed2);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(representations).
template <class T>
void backward(const ParameterSet<T>& params, const EncoderConfig& config, const PassOutput<T>& pass,
              const Matrix<T>& d_representations, ParameterSet<T>& grads);

/// Inner products of `representation` with the candidates' item embeddings.
template <class T>
std::vector<T> score(std::span<const T> representation, std::span<const ItemId> candidates,
                     const ParameterSet<T>& params);

}  // namespace ct4rec
