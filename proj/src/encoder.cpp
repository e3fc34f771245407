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

#include "ct4rec/encoder.hpp"

#include <cmath>
#include <limits>

#include "ct4rec/error.hpp"
#include "ct4rec/rng.hpp"

namespace ct4rec {

namespace {

constexpr double kLayerNormEps = 1e-8;

template <class T>
Matrix<T> zeros(Eigen::Index rows, Eigen::Index cols) {
  return Matrix<T>::Zero(rows, cols);
}

template <class T>
void layer_norm_forward(const Matrix<T>& x, const Matrix<T>& scale, const Matrix<T>& offset,
                        Matrix<T>& hat, std::vector<T>& rstd, Matrix<T>& out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  hat.resize(n, d);
  out.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    auto row = x.row(r);
    T mean = row.sum() / static_cast<T>(d);
    T var = (row.array() - mean).square().sum() / static_cast<T>(d);
    T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[r] = inv;
    hat.row(r) = (row.array() - mean) * inv;
    out.row(r) = hat.row(r).cwiseProduct(scale) + offset;
  }
}

/// Returns dx and accumulates into d_scale / d_offset.
template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& hat, const std::vector<T>& rstd,
                              const Matrix<T>& scale, Matrix<T>& d_scale, Matrix<T>& d_offset) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  Matrix<T> dx(n, d);
  d_scale += dy.cwiseProduct(hat).colwise().sum();
  d_offset += dy.colwise().sum();
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Matrix<T, 1, Eigen::Dynamic> dhat = dy.row(r).cwiseProduct(scale);
    T mean_dhat = dhat.sum() / static_cast<T>(d);
    T mean_dhat_hat = dhat.cwiseProduct(hat.row(r)).sum() / static_cast<T>(d);
    dx.row(r) = rstd[r] * (dhat.array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
  return dx;
}

/// Inverted-dropout mask: entries are 0 or 1 / (1 - rate).
template <class T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed) {
  Matrix<T> mask(rows, cols);
  Rng rng(seed);
  const auto threshold = static_cast<std::uint64_t>(rate * 18446744073709551616.0);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  T* data = mask.data();
  for (Eigen::Index i = 0; i < mask.size(); ++i) data[i] = rng() < threshold ? T(0) : keep;
  return mask;
}

template <class T>
void zero_padded_rows(Matrix<T>& x, const std::vector<std::uint8_t>& valid) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (!valid[r]) x.row(r).setZero();
  }
}

template <class T>
double truncated_normal(Rng& rng, std::normal_distribution<double>& dist, double sigma) {
  while (true) {
    double v = dist(rng);
    if (std::abs(v) <= 2.0 * sigma) return v;
  }
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void EncoderConfig::validate() const {
  if (embed_dim < 1 || n_layers < 0 || n_heads < 1 || max_seq_len < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (ffn_dim < 0) throw ConfigError("ffn_dim must be >= 0");
}

template <class T>
std::size_t ParameterSet<T>::tensor_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix<T>&) { ++n; });
  return n;
}

template <class T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet<T> out = *this;
  out.set_zero();
  return out;
}

template <class T>
void ParameterSet<T>::set_zero() {
  visit([](const std::string&, Matrix<T>& m) { m.setZero(); });
}

template <class T>
void ParameterSet<T>::add(const ParameterSet& other) {
  std::vector<const Matrix<T>*> src;
  other.visit([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  visit([&](const std::string&, Matrix<T>& m) { m += *src[i++]; });
}

template <class T>
bool ParameterSet<T>::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix<T>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <class T>
ParameterSet<T> init_params(const EncoderConfig& config, int catalog_size, std::uint64_t seed) {
  config.validate();
  if (catalog_size < 1) throw ConfigError("catalog_size must be >= 1");
  const int d = config.embed_dim;
  const int f = config.ffn();
  ParameterSet<T> p;
  p.item_embeddings = zeros<T>(catalog_size + 2, d);
  p.positional_embeddings = zeros<T>(config.max_seq_len, d);
  p.layers.resize(config.n_layers);
  for (auto& layer : p.layers) {
    layer.ln1_scale = zeros<T>(1, d);
    layer.ln1_offset = zeros<T>(1, d);
    layer.query = zeros<T>(d, d);
    layer.key = zeros<T>(d, d);
    layer.value = zeros<T>(d, d);
    layer.output = zeros<T>(d, d);
    layer.ln2_scale = zeros<T>(1, d);
    layer.ln2_offset = zeros<T>(1, d);
    layer.ffn_in = zeros<T>(d, f);
    layer.ffn_in_bias = zeros<T>(1, f);
    layer.ffn_out = zeros<T>(f, d);
    layer.ffn_out_bias = zeros<T>(1, d);
  }
  p.final_ln_scale = zeros<T>(1, d);
  p.final_ln_offset = zeros<T>(1, d);

  constexpr double sigma = 0.02;
  Rng rng = make_rng(seed, StreamTag::kInit);
  std::normal_distribution<double> dist(0.0, sigma);
  p.visit([&](const std::string& name, Matrix<T>& m) {
    if (ends_with(name, "scale")) {
      m.setOnes();
    } else if (ends_with(name, "offset") || ends_with(name, "bias")) {
      m.setZero();
    } else {
      T* data = m.data();
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        data[i] = static_cast<T>(truncated_normal<T>(rng, dist, sigma));
      }
    }
  });
  p.item_embeddings.row(kPaddingItem).setZero();
  return p;
}

template <class T>
PassOutput<T> forward(const ParameterSet<T>& params, const EncoderConfig& config,
                      const SequenceBatch& batch, std::optional<std::uint64_t> dropout_seed,
                      int dropout_id) {
  const int B = batch.batch_size;
  const int L = batch.max_len;
  const int d = config.embed_dim;
  const int H = config.n_heads;
  const int dh = config.head_dim();
  const Eigen::Index N = static_cast<Eigen::Index>(B) * L;
  if (L != config.max_seq_len) throw ConfigError("batch max_len does not match encoder max_seq_len");
  if (params.embed_dim() != d || static_cast<int>(params.layers.size()) != config.n_layers) {
    throw ConfigError("parameter set does not match encoder config");
  }
  const bool stochastic = dropout_seed.has_value() && config.dropout_rate > 0.0;
  const double rate = config.dropout_rate;
  auto site_seed = [&](std::uint64_t site) {
    return derive_seed(*dropout_seed, static_cast<std::uint64_t>(StreamTag::kDropout), site);
  };

  auto cache = std::make_shared<detail::ForwardCache<T>>();
  cache->inputs = batch.inputs;
  cache->key_valid.resize(N);
  const Eigen::Index rows = params.item_embeddings.rows();
  Matrix<T> x(N, d);
  for (Eigen::Index r = 0; r < N; ++r) {
    ItemId id = batch.inputs[r];
    if (id < 0 || id >= rows) {
      throw DataError("item id " + std::to_string(id) + " outside embedding table of " +
                      std::to_string(rows) + " rows");
    }
    cache->key_valid[r] = id != kPaddingItem;
    x.row(r) = params.item_embeddings.row(id) + params.positional_embeddings.row(r % L);
  }
  if (stochastic) {
    cache->embed_mask = dropout_mask<T>(N, d, rate, site_seed(0));
    x.array() *= cache->embed_mask.array();
  }
  zero_padded_rows(x, cache->key_valid);

  const T attn_scale = T(1) / std::sqrt(static_cast<T>(dh));
  cache->layers.resize(config.n_layers);
  for (int l = 0; l < config.n_layers; ++l) {
    const auto& w = params.layers[l];
    auto& c = cache->layers[l];
    c.input = x;
    layer_norm_forward(x, w.ln1_scale, w.ln1_offset, c.ln1_hat, c.ln1_rstd, c.ln1_out);
    c.q.noalias() = c.ln1_out * w.query;
    c.k.noalias() = c.ln1_out * w.key;
    c.v.noalias() = c.ln1_out * w.value;

    c.probs = zeros<T>(static_cast<Eigen::Index>(B) * H * L, L);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
      for (int h = 0; h < H; ++h) {
        auto block = c.probs.middleRows((static_cast<Eigen::Index>(b) * H + h) * L, L);
        block.noalias() = (c.q.block(r0, h * dh, L, dh) * c.k.block(r0, h * dh, L, dh).transpose()) * attn_scale;
        for (int i = 0; i < L; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (int j = 0; j <= i; ++j) {
            if (cache->key_valid[r0 + j]) mx = std::max(mx, block(i, j));
          }
          if (!cache->key_valid[r0 + i] || mx == -std::numeric_limits<T>::infinity()) {
            block.row(i).setZero();
            continue;
          }
          T sum = 0;
          for (int j = 0; j < L; ++j) {
            T e = (j <= i && cache->key_valid[r0 + j]) ? std::exp(block(i, j) - mx) : T(0);
            block(i, j) = e;
            sum += e;
          }
          block.row(i) /= sum;
        }
      }
    }
    if (stochastic) {
      c.prob_mask = dropout_mask<T>(c.probs.rows(), c.probs.cols(), rate, site_seed(1 + 2 * l));
      c.dropped = c.probs.cwiseProduct(c.prob_mask);
    } else {
      c.dropped = c.probs;
    }
    c.context.resize(N, d);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
      for (int h = 0; h < H; ++h) {
        c.context.block(r0, h * dh, L, dh).noalias() =
            c.dropped.middleRows((static_cast<Eigen::Index>(b) * H + h) * L, L) * c.v.block(r0, h * dh, L, dh);
      }
    }
    c.mid = x;
    c.mid.noalias() += c.context * w.output;

    layer_norm_forward(c.mid, w.ln2_scale, w.ln2_offset, c.ln2_hat, c.ln2_rstd, c.ln2_out);
    c.pre_act.noalias() = c.ln2_out * w.ffn_in;
    c.pre_act.rowwise() += w.ffn_in_bias.row(0);
    c.hidden = c.pre_act.cwiseMax(T(0));
    if (stochastic) {
      c.hidden_mask = dropout_mask<T>(c.hidden.rows(), c.hidden.cols(), rate, site_seed(2 + 2 * l));
      c.hidden.array() *= c.hidden_mask.array();
    }
    x = c.mid;
    x.noalias() += c.hidden * w.ffn_out;
    x.rowwise() += w.ffn_out_bias.row(0);
    zero_padded_rows(x, cache->key_valid);
  }

  PassOutput<T> out;
  out.batch_size = B;
  out.max_len = L;
  out.dropout_id = dropout_id;
  Matrix<T> final_out;
  layer_norm_forward(x, params.final_ln_scale, params.final_ln_offset, cache->final_hat,
                     cache->final_rstd, final_out);
  zero_padded_rows(final_out, cache->key_valid);
  out.representations = std::move(final_out);
  out.cache = std::move(cache);
  return out;
}

template <class T>
std::pair<PassOutput<T>, PassOutput<T>> forward_two_pass(const ParameterSet<T>& params,
                                                         const EncoderConfig& config,
                                                         const SequenceBatch& batch,
                                                         std::uint64_t seed1, std::uint64_t seed2) {
  if (seed1 == seed2) throw ConfigError("two-pass forward needs distinct dropout seeds");
  return {forward(params, config, batch, seed1, 1), forward(params, config, batch, seed2, 2)};
}

template <class T>
void backward(const ParameterSet<T>& params, const EncoderConfig& config, const PassOutput<T>& pass,
              const Matrix<T>& d_representations, ParameterSet<T>& grads) {
  const auto& cache = *pass.cache;
  const int B = pass.batch_size;
  const int L = pass.max_len;
  const int H = config.n_heads;
  const int dh = config.head_dim();
  const T attn_scale = T(1) / std::sqrt(static_cast<T>(dh));

  Matrix<T> dy = d_representations;
  zero_padded_rows(dy, cache.key_valid);
  Matrix<T> dx = layer_norm_backward(dy, cache.final_hat, cache.final_rstd, params.final_ln_scale,
                                     grads.final_ln_scale, grads.final_ln_offset);

  for (int l = config.n_layers - 1; l >= 0; --l) {
    const auto& w = params.layers[l];
    auto& g = grads.layers[l];
    const auto& c = cache.layers[l];
    zero_padded_rows(dx, cache.key_valid);

    // x_out = mid + hidden * W2 + b2
    Matrix<T> d_mid = dx;
    g.ffn_out_bias += dx.colwise().sum();
    g.ffn_out.noalias() += c.hidden.transpose() * dx;
    Matrix<T> d_hidden = dx * w.ffn_out.transpose();
    if (c.hidden_mask.size() > 0) d_hidden.array() *= c.hidden_mask.array();
    d_hidden.array() *= (c.pre_act.array() > T(0)).template cast<T>();
    g.ffn_in_bias += d_hidden.colwise().sum();
    g.ffn_in.noalias() += c.ln2_out.transpose() * d_hidden;
    Matrix<T> d_ln2 = d_hidden * w.ffn_in.transpose();
    d_mid += layer_norm_backward(d_ln2, c.ln2_hat, c.ln2_rstd, w.ln2_scale, g.ln2_scale, g.ln2_offset);

    // mid = input + context * Wo
    Matrix<T> d_input = d_mid;
    g.output.noalias() += c.context.transpose() * d_mid;
    Matrix<T> d_context = d_mid * w.output.transpose();

    Matrix<T> dq = zeros<T>(c.q.rows(), c.q.cols());
    Matrix<T> dk = zeros<T>(c.k.rows(), c.k.cols());
    Matrix<T> dv = zeros<T>(c.v.rows(), c.v.cols());
    Matrix<T> d_probs(L, L);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
      for (int h = 0; h < H; ++h) {
        const Eigen::Index p0 = (static_cast<Eigen::Index>(b) * H + h) * L;
        auto dctx = d_context.block(r0, h * dh, L, dh);
        dv.block(r0, h * dh, L, dh).noalias() += c.dropped.middleRows(p0, L).transpose() * dctx;
        d_probs.noalias() = dctx * c.v.block(r0, h * dh, L, dh).transpose();
        if (c.prob_mask.size() > 0) d_probs.array() *= c.prob_mask.middleRows(p0, L).array();
        auto probs = c.probs.middleRows(p0, L);
        // softmax backward; masked entries have zero probability
        for (int i = 0; i < L; ++i) {
          T inner = d_probs.row(i).dot(probs.row(i));
          d_probs.row(i) = probs.row(i).cwiseProduct((d_probs.row(i).array() - inner).matrix());
        }
        d_probs *= attn_scale;
        dq.block(r0, h * dh, L, dh).noalias() += d_probs * c.k.block(r0, h * dh, L, dh);
        dk.block(r0, h * dh, L, dh).noalias() += d_probs.transpose() * c.q.block(r0, h * dh, L, dh);
      }
    }
    g.query.noalias() += c.ln1_out.transpose() * dq;
    g.key.noalias() += c.ln1_out.transpose() * dk;
    g.value.noalias() += c.ln1_out.transpose() * dv;
    Matrix<T> d_ln1 = dq * w.query.transpose();
    d_ln1.noalias() += dk * w.key.transpose();
    d_ln1.noalias() += dv * w.value.transpose();
    d_input += layer_norm_backward(d_ln1, c.ln1_hat, c.ln1_rstd, w.ln1_scale, g.ln1_scale, g.ln1_offset);
    dx = std::move(d_input);
  }

  zero_padded_rows(dx, cache.key_valid);
  if (cache.embed_mask.size() > 0) dx.array() *= cache.embed_mask.array();
  for (Eigen::Index r = 0; r < dx.rows(); ++r) {
    ItemId id = cache.inputs[r];
    if (id == kPaddingItem) continue;
    grads.item_embeddings.row(id) += dx.row(r);
    grads.positional_embeddings.row(r % L) += dx.row(r);
  }
}

template <class T>
std::vector<T> score(std::span<const T> representation, std::span<const ItemId> candidates,
                     const ParameterSet<T>& params) {
  std::vector<T> logits;
  logits.reserve(candidates.size());
  for (ItemId id : candidates) {
    logits.push_back(dot(representation, row_span(params.item_embeddings, id)));
  }
  return logits;
}

#define CT4REC_INSTANTIATE_ENCODER(T)                                                              \
  template struct ParameterSet<T>;                                                                 \
  template ParameterSet<T> init_params<T>(const EncoderConfig&, int, std::uint64_t);              \
  template PassOutput<T> forward<T>(const ParameterSet<T>&, const EncoderConfig&,                 \
                                    const SequenceBatch&, std::optional<std::uint64_t>, int);     \
  template std::pair<PassOutput<T>, PassOutput<T>> forward_two_pass<T>(                           \
      const ParameterSet<T>&, const EncoderConfig&, const SequenceBatch&, std::uint64_t,          \
      std::uint64_t);                                                                              \
  template void backward<T>(const ParameterSet<T>&, const EncoderConfig&, const PassOutput<T>&,   \
                            const Matrix<T>&, ParameterSet<T>&);                                   \
  template std::vector<T> score<T>(std::span<const T>, std::span<const ItemId>,                   \
                                   const ParameterSet<T>&);

CT4REC_INSTANTIATE_ENCODER(float)
CT4REC_INSTANTIATE_ENCODER(double)

}  // namespace ct4rec
