#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mpft/autodiff/ops.hpp"
#include "mpft/data/longtail.hpp"
#include "mpft/peft/site.hpp"

namespace mpft {

struct BackboneConfig {
  std::size_t num_blocks = 2;
  std::size_t model_dim = 16;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 32;
  std::size_t num_tokens = 4;
  std::size_t input_dim = 8;
  std::size_t num_classes = 10;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Linear maps are stored [in x out] and applied as x * W + b.
struct BlockWeights {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor w1, b1, w2, b2;
};

struct BackboneWeights {
  BackboneConfig config;
  ad::Tensor input_proj, input_bias;
  std::vector<BlockWeights> blocks;
  ad::Tensor final_gain, final_bias;
  bool frozen = false;

  /// Frozen weights carry no gradient slot at all.
  void set_frozen(bool on);
  std::vector<std::pair<std::string, ad::Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const ad::Tensor*>> named_tensors() const;
};

struct ClassifierHead {
  ad::Tensor weight;  // [d_m x C]
  ad::Tensor bias;    // [C]

  void set_trainable(bool on);
};

/// Values available to a site interceptor. `input` is what the hooked linear
/// consumes, `output` its result before any delta, and `ffn_input` the
/// normalized input of the block's feed-forward sublayer.
struct SiteActivations {
  ad::Var input;
  ad::Var output;
  ad::Var ffn_input;
};

/// Returns the additive delta for a site; its shape must equal `output`.
using SiteHook = std::function<ad::Var(const InsertionSite&, const SiteActivations&)>;
/// Observes every site's sublayer output before and after its delta, and
/// the delta itself (null when the site has no hook).
using SiteProbe = std::function<void(const InsertionSite&, const ad::Tensor& before,
                                     const ad::Tensor* delta, const ad::Tensor& after)>;

struct ForwardHooks {
  std::map<InsertionSite, SiteHook> hooks;
  SiteProbe probe;
};

struct ForwardOutput {
  ad::Var features;  // [B x d_m]
  ad::Var logits;    // [B x C]
};

BackboneWeights init_backbone(const BackboneConfig& cfg);
ClassifierHead init_head(const BackboneConfig& cfg);

/// Pre-norm encoder: input projection, L blocks of attention + FFN with
/// residuals, final layer norm, mean pooling over tokens.
/// `x` is [B x T x d_in]. Weights that require grad become tracked leaves.
ad::Var encode(ad::Tape& tape, BackboneWeights& w, const ad::Tensor& x,
               const ForwardHooks* hooks = nullptr);
/// Same as above; every weight enters the tape as a constant.
ad::Var encode(ad::Tape& tape, const BackboneWeights& w, const ad::Tensor& x,
               const ForwardHooks* hooks = nullptr);

ForwardOutput forward(ad::Tape& tape, BackboneWeights& w, ClassifierHead& head,
                      const ad::Tensor& x, const ForwardHooks* hooks = nullptr,
                      bool track_head = true);
ForwardOutput forward(ad::Tape& tape, const BackboneWeights& w, ClassifierHead& head,
                      const ad::Tensor& x, const ForwardHooks* hooks = nullptr,
                      bool track_head = true);

/// Features of every sample in `x`, evaluated in chunks without gradient.
ad::Tensor extract_features(const BackboneWeights& w, const ad::Tensor& x);

struct PretrainOptions {
  std::size_t steps = 300;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> step_losses;
};

/// Plain SGD on cross-entropy over the whole network and head. Initial and
/// final losses are measured on the full source set.
PretrainResult pretrain_source(BackboneWeights& w, ClassifierHead& head,
                               const data::LongTailedDataset& source, const PretrainOptions& opts);

/// Column c of the weight is the mean feature of class c; bias is zero.
ClassifierHead init_head_class_means(const ad::Tensor& features, std::span<const std::size_t> labels,
                                     std::size_t num_classes);

}  // namespace mpft
