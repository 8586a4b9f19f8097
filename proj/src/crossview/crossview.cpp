// SPDX-License-Identifier: Apache-2.0
#include "cvm/crossview/crossview.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvm/core/error.hpp"

namespace cvm::cv {

using ad::Tensor;

void SpatialEncoderConfig::validate() const {
  if (block_channels.empty()) throw ConfigError("spatial encoder needs at least one residual block");
  for (auto c : block_channels)
    if (c <= 0) throw ConfigError("spatial encoder channels must be positive");
  if (downsample_factor != (std::int64_t{1} << block_channels.size()))
    throw ConfigError("spatial encoder: " + std::to_string(block_channels.size()) +
                      " stride-2 blocks cannot produce downsample factor " + std::to_string(downsample_factor));
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  return ad::silu(ad::add(conv2(ad::silu(conv1(x))), shortcut(x)));
}

SpatialEncoder SpatialEncoder::create(ad::ParamStore& ps, const std::string& name, const SpatialEncoderConfig& cfg,
                                      Rng& rng) {
  cfg.validate();
  SpatialEncoder e;
  e.cfg_ = cfg;
  std::int64_t in = 3;
  for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
    const std::int64_t out = cfg.block_channels[b];
    const std::string p = name + ".block" + std::to_string(b);
    ResidualBlock blk;
    blk.conv1 = ad::Conv2d::create(ps, p + ".conv1", in, out, 3, 2, 1, rng);
    blk.conv2 = ad::Conv2d::create(ps, p + ".conv2", out, out, 3, 1, 1, rng);
    blk.shortcut = ad::Conv2d::create(ps, p + ".shortcut", in, out, 1, 2, 0, rng);
    e.blocks_.push_back(std::move(blk));
    in = out;
  }
  return e;
}

Tensor SpatialEncoder::operator()(const Tensor& images) const {
  if (images.rank() != 4) throw DimensionError("spatial encoder expects [V,3,H,W], got " + ad::shape_str(images.shape()));
  if (images.dim(1) != 3)
    throw ContractError("spatial encoder expects 3 colour channels, got " + std::to_string(images.dim(1)));
  const std::int64_t f = cfg_.downsample_factor;
  const std::int64_t ph = (f - images.dim(2) % f) % f, pw = (f - images.dim(3) % f) % f;
  Tensor h = (ph || pw) ? ad::pad2d(images, 0, ph, 0, pw) : images;
  for (const auto& blk : blocks_) h = blk(h);
  return h;
}

void MvTransformerConfig::validate() const {
  if (layers <= 0 || layers % 2) throw ConfigError("transformer layer count must be positive and even");
  if (window_size <= 0) throw ConfigError("window size must be positive");
  if (heads <= 0 || channels % heads) throw ConfigError("channels must be divisible by the head count");
  if (neighbor_limit < 1) throw ConfigError("neighbor limit must be >= 1");
  if (ffn_expansion <= 0 || adapter_expansion <= 0) throw ConfigError("expansion factors must be positive");
}

std::vector<std::vector<std::int64_t>> select_neighbors(std::int64_t views, std::int64_t limit,
                                                        const std::optional<std::vector<geo::Vec3>>& centers) {
  if (views < 1) throw ContractError("need at least one view");
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(views));
  if (views == 1) {
    out[0] = {0};
    return out;
  }
  if (views - 1 > limit) {
    if (!centers)
      throw ContractError(std::to_string(views) + " views exceed the neighbour limit of " + std::to_string(limit) +
                          "; camera positions are required to pick nearest neighbours");
    if (static_cast<std::int64_t>(centers->size()) != views)
      throw ContractError("camera position count does not match the view count");
  }
  for (std::int64_t i = 0; i < views; ++i) {
    std::vector<std::int64_t> others;
    for (std::int64_t j = 0; j < views; ++j)
      if (j != i) others.push_back(j);
    if (views - 1 > limit) {
      const auto& c = *centers;
      std::stable_sort(others.begin(), others.end(), [&](std::int64_t a, std::int64_t b) {
        return (c[a] - c[i]).squaredNorm() < (c[b] - c[i]).squaredNorm();
      });
      others.resize(static_cast<std::size_t>(limit));
      std::sort(others.begin(), others.end());
    }
    out[i] = std::move(others);
  }
  return out;
}

Tensor window_partition(const Tensor& x, std::int64_t w) {
  const std::int64_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  if (h % w || wd % w)
    throw DimensionError("window_partition: map " + ad::shape_str(x.shape()) + " is not a multiple of window " +
                         std::to_string(w));
  Tensor t = ad::reshape(x, {c, h / w, w, wd / w, w});
  t = ad::permute(t, {1, 3, 2, 4, 0});  // [nh, nw, w, w, C]
  return ad::reshape(t, {(h / w) * (wd / w), w * w, c});
}

Tensor window_unpartition(const Tensor& windows, std::int64_t w, std::int64_t h, std::int64_t wd) {
  const std::int64_t c = windows.dim(2);
  Tensor t = ad::reshape(windows, {h / w, wd / w, w, w, c});
  t = ad::permute(t, {4, 0, 2, 1, 3});  // [C, nh, w, nw, w]
  return ad::reshape(t, {c, h, wd});
}

MvTransformer MvTransformer::create(ad::ParamStore& ps, const std::string& name, const MvTransformerConfig& cfg,
                                    Rng& rng) {
  cfg.validate();
  MvTransformer m;
  m.cfg_ = cfg;
  const std::int64_t c = cfg.channels, w = cfg.window_size;
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.cross = l % 2 == 1;
    layer.output_norm = l != cfg.layers - 1;
    layer.q = ad::Linear::create(ps, p + ".q", c, c, rng, false);
    layer.k = ad::Linear::create(ps, p + ".k", c, c, rng, false);
    layer.v = ad::Linear::create(ps, p + ".v", c, c, rng, false);
    layer.proj = ad::Linear::create(ps, p + ".proj", c, c, rng, false);
    layer.norm1 = ad::LayerNorm::create(ps, p + ".norm1", c);
    if (layer.cross) {
      layer.ffn1 = ad::Linear::create(ps, p + ".ffn1", 2 * c, 2 * c * cfg.ffn_expansion, rng, false);
      layer.ffn2 = ad::Linear::create(ps, p + ".ffn2", 2 * c * cfg.ffn_expansion, c, rng, false);
      if (layer.output_norm) layer.norm2 = ad::LayerNorm::create(ps, p + ".norm2", c);
    }
    layer.bias_table = ps.constant(p + ".rel_bias", {(2 * w - 1) * (2 * w - 1), cfg.heads}, 0.0);
    m.layers_.push_back(std::move(layer));
  }
  const std::int64_t hidden = c * cfg.adapter_expansion;
  m.adapter_gate_ = ad::Linear::create(ps, name + ".adapter.gate", c, hidden, rng);
  m.adapter_value_ = ad::Linear::create(ps, name + ".adapter.value", c, hidden, rng);
  m.adapter_out_ = ad::Linear::create(ps, name + ".adapter.out", hidden, c, rng);

  m.bias_index_.reserve(static_cast<std::size_t>(w * w * w * w));
  for (std::int64_t qi = 0; qi < w; ++qi)
    for (std::int64_t qj = 0; qj < w; ++qj)
      for (std::int64_t ki = 0; ki < w; ++ki)
        for (std::int64_t kj = 0; kj < w; ++kj)
          m.bias_index_.push_back((qi - ki + w - 1) * (2 * w - 1) + (qj - kj + w - 1));
  return m;
}

Tensor MvTransformer::attend(const Layer& layer, const Tensor& x, const std::vector<Tensor>& sources, std::int64_t h,
                             std::int64_t wd, bool shift, AttentionTrace* trace) const {
  const std::int64_t c = cfg_.channels, w = cfg_.window_size, nh = cfg_.heads, dh = c / nh;
  const std::int64_t top = shift ? w / 2 : 0, left = top;
  const std::int64_t hp = (h + top + w - 1) / w * w, wp = (wd + left + w - 1) / w * w;
  const std::int64_t bottom = hp - h - top, right = wp - wd - left;
  const bool padded = hp != h || wp != wd;
  const std::int64_t nwin = (hp / w) * (wp / w), t = w * w;
  const auto nsrc = static_cast<std::int64_t>(sources.size());

  auto windows = [&](const Tensor& tokens) {
    Tensor map = ad::reshape(ad::permute(tokens, {1, 0}), {c, h, wd});
    if (padded) map = ad::pad2d(map, top, bottom, left, right);
    return window_partition(map, w);  // [nwin, t, C]
  };

  auto split_heads = [&](const Tensor& y, std::int64_t len) {
    return ad::permute(ad::reshape(y, {nwin, len, nh, dh}), {0, 2, 1, 3});  // [nwin, heads, len, dh]
  };

  const Tensor xw = windows(x);
  std::vector<Tensor> parts;
  for (const auto& s : sources) parts.push_back(windows(s));
  const Tensor sw = nsrc == 1 ? parts[0] : ad::concat(parts, 1);  // [nwin, nsrc*t, C]
  const std::int64_t s_len = nsrc * t;

  const Tensor q = split_heads(layer.q(xw), t);
  const Tensor k = split_heads(layer.k(sw), s_len);
  const Tensor v = split_heads(layer.v(sw), s_len);
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor bias = ad::permute(ad::reshape(ad::index_select(layer.bias_table, bias_index_), {t, t, nh}), {2, 0, 1});
  if (nsrc > 1) bias = ad::concat(std::vector<Tensor>(static_cast<std::size_t>(nsrc), bias), 2);
  scores = ad::add(scores, bias);

  if (padded) {
    // Keys that fall in the padding never receive attention.
    std::vector<double> mask(static_cast<std::size_t>(nwin * s_len), 0.0);
    const std::int64_t per_row = wp / w;
    for (std::int64_t n = 0; n < nwin; ++n)
      for (std::int64_t s = 0; s < s_len; ++s) {
        const std::int64_t tok = s % t;
        const std::int64_t y = (n / per_row) * w + tok / w, xx = (n % per_row) * w + tok % w;
        if (y < top || y >= top + h || xx < left || xx >= left + wd) mask[n * s_len + s] = -1e30;
      }
    scores = ad::add(scores, Tensor::from({nwin, 1, 1, s_len}, std::move(mask)));
  }

  const Tensor attn = ad::softmax(scores, 3);
  if (trace) trace->maps.push_back(attn.detach());
  Tensor msg = ad::reshape(ad::permute(ad::matmul(attn, v), {0, 2, 1, 3}), {nwin, t, c});
  msg = layer.proj(msg);

  Tensor map = window_unpartition(msg, w, hp, wp);
  if (padded) map = ad::narrow(ad::narrow(map, 1, top, h), 2, left, wd);
  msg = ad::permute(ad::reshape(map, {c, h * wd}), {1, 0});  // [P, C]

  msg = layer.norm1(msg);
  if (layer.cross) {
    msg = layer.ffn2(ad::silu(layer.ffn1(ad::concat({x, msg}, 1))));
    if (layer.output_norm) msg = layer.norm2(msg);
  }
  return ad::add(x, msg);
}

Tensor MvTransformer::operator()(const Tensor& feats, const std::optional<std::vector<geo::Vec3>>& centers,
                                 AttentionTrace* trace) const {
  if (feats.rank() != 4 || feats.dim(1) != cfg_.channels)
    throw DimensionError("transformer expects [V," + std::to_string(cfg_.channels) + ",H,W], got " +
                         ad::shape_str(feats.shape()));
  const std::int64_t views = feats.dim(0), c = cfg_.channels, h = feats.dim(2), w = feats.dim(3);
  const auto neighbors = select_neighbors(views, cfg_.neighbor_limit, centers);

  std::vector<Tensor> tokens;
  for (std::int64_t v = 0; v < views; ++v)
    tokens.push_back(ad::permute(ad::reshape(ad::narrow(feats, 0, v, 1), {c, h * w}), {1, 0}));  // [P, C]

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const bool shift = cfg_.shifted_windows && (l / 2) % 2 == 1;
    std::vector<Tensor> next;
    for (std::int64_t v = 0; v < views; ++v) {
      std::vector<Tensor> src;
      if (layer.cross)
        for (auto j : neighbors[v]) src.push_back(tokens[j]);
      else
        src.push_back(tokens[v]);
      next.push_back(attend(layer, tokens[v], src, h, w, shift, trace));
    }
    tokens = std::move(next);
  }

  std::vector<Tensor> out;
  for (auto& tok : tokens) {
    Tensor y = ad::add(tok, adapter_out_(ad::silu_gate(adapter_gate_(tok), adapter_value_(tok))));
    out.push_back(ad::reshape(ad::permute(y, {1, 0}), {1, c, h, w}));
  }
  return views == 1 ? out[0] : ad::concat(out, 0);
}

}  // namespace cvm::cv
