#include "mpft/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mpft/errors.hpp"

namespace mpft {

using ad::Tensor;
using ad::Var;

void BackboneConfig::validate() const {
  if (num_blocks < 1) throw ConfigError("backbone.num_blocks must be >= 1");
  if (num_tokens < 1) throw ConfigError("backbone.num_tokens must be >= 1");
  if (num_classes < 2) throw ConfigError("backbone.num_classes must be >= 2");
  if (model_dim < 1 || ffn_dim < 1 || input_dim < 1) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (num_heads < 1 || model_dim % num_heads != 0) {
    throw ConfigError("backbone.model_dim must be divisible by backbone.num_heads");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("backbone.ln_eps must be positive");
}

namespace {

Tensor gaussian(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = normal(rng);
  return Tensor({fan_in, fan_out}, std::move(v));
}

// Mutable weights become leaves (tracked when they require grad); const
// weights are copied in as constants.
Var bind(ad::Tape& tape, Tensor& t) { return tape.leaf(t); }
Var bind(ad::Tape& tape, const Tensor& t) { return tape.constant(t); }

Var linear(Var x, Var w, Var b) { return ad::add_row(ad::matmul(x, w), b); }

template <class Weights>
Var encode_impl(ad::Tape& tape, Weights& w, const Tensor& x, const ForwardHooks* hooks) {
  const BackboneConfig& cfg = w.config;
  if (x.rank() != 3 || x.dim(1) != cfg.num_tokens || x.dim(2) != cfg.input_dim) {
    throw DimensionError("backbone input must be [B x " + std::to_string(cfg.num_tokens) + " x " +
                         std::to_string(cfg.input_dim) + "], got " + ad::shape_str(x.shape()));
  }
  if (hooks) {
    for (const auto& [site, hook] : hooks->hooks) {
      if (site.depth < 1 || site.depth > cfg.num_blocks) {
        throw SiteError("no insertion site " + site_name(site) + " in a " +
                        std::to_string(cfg.num_blocks) + "-block backbone");
      }
    }
  }
  const std::size_t batch = x.dim(0), tokens = cfg.num_tokens;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.model_dim / cfg.num_heads));
  auto p = [&](auto& t) { return bind(tape, t); };

  auto site = [&](std::size_t depth, Position pos, Var input, Var output, Var ffn_input) {
    if (!hooks) return output;
    const InsertionSite where{depth, pos};
    Var result = output;
    const Tensor* applied = nullptr;
    if (auto it = hooks->hooks.find(where); it != hooks->hooks.end()) {
      Var delta = it->second(where, SiteActivations{input, output, ffn_input});
      if (delta.shape() != output.shape()) {
        throw DimensionError("delta at " + site_name(where) + " has shape " +
                             ad::shape_str(delta.shape()) + ", sublayer output is " +
                             ad::shape_str(output.shape()));
      }
      result = ad::add(output, delta);
      applied = &delta.value();
    }
    if (hooks->probe) hooks->probe(where, output.value(), applied, result.value());
    return result;
  };

  Var h = linear(tape.constant(x.reshaped({batch * tokens, cfg.input_dim})), p(w.input_proj),
                 p(w.input_bias));
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    auto& blk = w.blocks[l];
    const std::size_t depth = l + 1;

    Var a = ad::layer_norm(h, p(blk.ln1_gain), p(blk.ln1_bias), cfg.ln_eps);
    Var q = site(depth, Position::Q, a, linear(a, p(blk.wq), p(blk.bq)), a);
    Var k = site(depth, Position::K, a, linear(a, p(blk.wk), p(blk.bk)), a);
    Var v = site(depth, Position::V, a, linear(a, p(blk.wv), p(blk.bv)), a);
    Var qh = ad::split_heads(q, cfg.num_heads, tokens);
    Var kh = ad::split_heads(k, cfg.num_heads, tokens);
    Var vh = ad::split_heads(v, cfg.num_heads, tokens);
    Var attn = ad::softmax(ad::scale(ad::batch_matmul(qh, kh, true), attn_scale));
    Var ctx = ad::merge_heads(ad::batch_matmul(attn, vh), cfg.num_heads);
    Var o = site(depth, Position::Out, ctx, linear(ctx, p(blk.wo), p(blk.bo)), ctx);
    h = ad::add(h, o);

    Var f = ad::layer_norm(h, p(blk.ln2_gain), p(blk.ln2_bias), cfg.ln_eps);
    Var m1 = site(depth, Position::MLP1, f, linear(f, p(blk.w1), p(blk.b1)), f);
    Var hidden = ad::relu(m1);
    Var m2 = site(depth, Position::MLP2, hidden, linear(hidden, p(blk.w2), p(blk.b2)), f);
    h = ad::add(h, m2);
  }
  Var out = ad::layer_norm(h, p(w.final_gain), p(w.final_bias), cfg.ln_eps);
  return ad::mean_tokens(ad::reshape(out, {batch, tokens, cfg.model_dim}));
}

Var head_logits(ad::Tape& tape, ClassifierHead& head, Var features, bool track) {
  return ad::add_row(ad::matmul(features, tape.leaf(head.weight, track)),
                     tape.leaf(head.bias, track));
}

}  // namespace

void BackboneWeights::set_frozen(bool on) {
  frozen = on;
  for (auto& [name, t] : named_tensors()) t->set_requires_grad(!on);
}

std::vector<std::pair<std::string, Tensor*>> BackboneWeights::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("backbone.input_proj", &input_proj);
  out.emplace_back("backbone.input_bias", &input_bias);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto& b = blocks[l];
    const std::string pre = "backbone.block" + std::to_string(l + 1) + ".";
    for (auto [name, t] : std::initializer_list<std::pair<const char*, Tensor*>>{
             {"ln1_gain", &b.ln1_gain}, {"ln1_bias", &b.ln1_bias}, {"wq", &b.wq}, {"bq", &b.bq},
             {"wk", &b.wk}, {"bk", &b.bk}, {"wv", &b.wv}, {"bv", &b.bv}, {"wo", &b.wo},
             {"bo", &b.bo}, {"ln2_gain", &b.ln2_gain}, {"ln2_bias", &b.ln2_bias}, {"w1", &b.w1},
             {"b1", &b.b1}, {"w2", &b.w2}, {"b2", &b.b2}}) {
      out.emplace_back(pre + name, t);
    }
  }
  out.emplace_back("backbone.final_gain", &final_gain);
  out.emplace_back("backbone.final_bias", &final_bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> BackboneWeights::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<BackboneWeights*>(this)->named_tensors()) out.emplace_back(name, t);
  return out;
}

void ClassifierHead::set_trainable(bool on) {
  weight.set_requires_grad(on);
  bias.set_requires_grad(on);
}

BackboneWeights init_backbone(const BackboneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t d = cfg.model_dim;
  BackboneWeights w;
  w.config = cfg;
  w.input_proj = gaussian(rng, cfg.input_dim, d);
  w.input_bias = Tensor::zeros({d});
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    BlockWeights b;
    b.ln1_gain = Tensor::filled({d}, 1.0);
    b.ln1_bias = Tensor::zeros({d});
    b.wq = gaussian(rng, d, d);
    b.bq = Tensor::zeros({d});
    b.wk = gaussian(rng, d, d);
    b.bk = Tensor::zeros({d});
    b.wv = gaussian(rng, d, d);
    b.bv = Tensor::zeros({d});
    b.wo = gaussian(rng, d, d);
    b.bo = Tensor::zeros({d});
    b.ln2_gain = Tensor::filled({d}, 1.0);
    b.ln2_bias = Tensor::zeros({d});
    b.w1 = gaussian(rng, d, cfg.ffn_dim);
    b.b1 = Tensor::zeros({cfg.ffn_dim});
    b.w2 = gaussian(rng, cfg.ffn_dim, d);
    b.b2 = Tensor::zeros({d});
    w.blocks.push_back(std::move(b));
  }
  w.final_gain = Tensor::filled({d}, 1.0);
  w.final_bias = Tensor::zeros({d});
  w.set_frozen(false);
  return w;
}

ClassifierHead init_head(const BackboneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ClassifierHead head{gaussian(rng, cfg.model_dim, cfg.num_classes), Tensor::zeros({cfg.num_classes})};
  head.set_trainable(true);
  return head;
}

Var encode(ad::Tape& tape, BackboneWeights& w, const Tensor& x, const ForwardHooks* hooks) {
  return encode_impl(tape, w, x, hooks);
}

Var encode(ad::Tape& tape, const BackboneWeights& w, const Tensor& x, const ForwardHooks* hooks) {
  return encode_impl(tape, w, x, hooks);
}

ForwardOutput forward(ad::Tape& tape, BackboneWeights& w, ClassifierHead& head, const Tensor& x,
                      const ForwardHooks* hooks, bool track_head) {
  Var features = encode(tape, w, x, hooks);
  return {features, head_logits(tape, head, features, track_head)};
}

ForwardOutput forward(ad::Tape& tape, const BackboneWeights& w, ClassifierHead& head,
                      const Tensor& x, const ForwardHooks* hooks, bool track_head) {
  Var features = encode(tape, w, x, hooks);
  return {features, head_logits(tape, head, features, track_head)};
}

Tensor extract_features(const BackboneWeights& w, const Tensor& x) {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = x.dim(0), width = x.dim(1) * x.dim(2), d = w.config.model_dim;
  std::vector<double> out;
  out.reserve(n * d);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t len = std::min(kChunk, n - start);
    std::vector<double> slice(x.data().begin() + static_cast<std::ptrdiff_t>(start * width),
                              x.data().begin() + static_cast<std::ptrdiff_t>((start + len) * width));
    ad::Tape tape;
    Var f = encode(tape, w, Tensor({len, x.dim(1), x.dim(2)}, std::move(slice)));
    out.insert(out.end(), f.value().data().begin(), f.value().data().end());
  }
  return Tensor({n, d}, std::move(out));
}

namespace {

double dataset_loss(const BackboneWeights& w, ClassifierHead& head,
                    const data::LongTailedDataset& set) {
  ad::Tape tape;
  auto out = forward(tape, w, head, set.features, nullptr, false);
  return ad::softmax_cross_entropy(out.logits, set.labels).value().item();
}

}  // namespace

PretrainResult pretrain_source(BackboneWeights& w, ClassifierHead& head,
                               const data::LongTailedDataset& source, const PretrainOptions& opts) {
  if (w.frozen) throw ContractError("pretrain_source needs unfrozen backbone weights");
  if (opts.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  head.set_trainable(true);

  PretrainResult result;
  result.initial_loss = dataset_loss(w, head, source);

  auto rng = data::make_rng(opts.seed, 0x5eed);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::pair<std::string, Tensor*>> params = w.named_tensors();
  params.emplace_back("head.weight", &head.weight);
  params.emplace_back("head.bias", &head.bias);

  for (std::size_t step = 0; step < opts.steps; ++step) {
    if (cursor + opts.batch_size > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t len = std::min(opts.batch_size, order.size());
    auto batch = data::gather(source, std::span(order).subspan(cursor, len));
    cursor += len;

    ad::Tape tape;
    auto out = forward(tape, w, head, batch.x);
    Var loss = ad::softmax_cross_entropy(out.logits, batch.labels);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw TrainingError("pretraining diverged at step " + std::to_string(step));
    }
    result.step_losses.push_back(value);
    tape.backward(loss);
    for (auto& [name, t] : params) {
      auto values = t->mutable_data();
      auto grad = t->grad();
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= opts.lr * grad[i];
      t->clear_grad();
    }
  }
  result.final_loss = dataset_loss(w, head, source);
  if (!std::isfinite(result.final_loss)) throw TrainingError("pretraining ended with non-finite loss");
  return result;
}

ClassifierHead init_head_class_means(const Tensor& features, std::span<const std::size_t> labels,
                                     std::size_t num_classes) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw DimensionError("class-mean init needs [N x d] features matching the labels");
  }
  const std::size_t d = features.dim(1);
  std::vector<double> sums(d * num_classes, 0.0);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    if (c >= num_classes) throw IndexError("label " + std::to_string(c) + " out of range");
    ++counts[c];
    for (std::size_t j = 0; j < d; ++j) sums[j * num_classes + c] += features[i * d + j];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw InitError("class " + std::to_string(c) + " has no features");
    for (std::size_t j = 0; j < d; ++j) sums[j * num_classes + c] /= static_cast<double>(counts[c]);
  }
  ClassifierHead head{Tensor({d, num_classes}, std::move(sums)), Tensor::zeros({num_classes})};
  head.set_trainable(true);
  return head;
}

}  // namespace mpft
