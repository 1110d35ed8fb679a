// SPDX-License-Identifier: Apache-2.0
//
// A small causal transformer over pause-expanded sequences. Rotary phases
// come from the pipeline's position indices (pauses repeat the preceding real
// token's index), pause slots optionally add a learned per-slot key offset,
// and the output head applies the DK prior shift before softmax. Forward and
// backward are hand-written over the kernels in kernels.hpp; backward is
// checked against finite differences in the tests.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyb/dk_head.hpp"
#include "cyb/pipeline.hpp"

namespace cyb {

struct ModelConfig {
    int vocab_size = 0;
    int dim = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_pause_slots = 3;          // highest pause index the model accepts
    bool use_pause_key_offset = false;
    std::uint64_t seed = 0;
    double rope_base = 10000.0;

    int head_dim() const { return dim / n_heads; }
    int hidden_dim() const { return 4 * dim; }
};

void validate_model_config(const ModelConfig& cfg);

// A batch of expanded sequences flattened into rows. seq_offsets has one
// entry per sequence plus a trailing total.
struct ModelBatch {
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> positions;
    std::vector<std::int32_t> pause_slots;
    std::vector<int> seq_offsets;

    int rows() const { return static_cast<int>(ids.size()); }
    int n_seqs() const { return static_cast<int>(seq_offsets.size()) - 1; }
};

ModelBatch make_model_batch(const std::vector<ExpandedSequence>& seqs);

// Per-token step outputs assembled group-wise from the slots of each token
// group. d at the final granted step is 0 by construction; t is read from
// the DK-renormalized distribution at every step.
struct StepOutputs {
    struct Group {
        int seq_index = 0;
        int first_row = 0;        // global row of the group's real-token slot
        TokenId context = 0;      // the real token the group extends
        TokenId target = kMaskId;
        std::vector<double> t;    // empty when target == kMaskId
        std::vector<double> d;
    };
    std::vector<Group> groups;
};

template <typename T>
struct ParamRef {
    std::string name;
    T* data = nullptr;
    T* grad = nullptr;
    std::size_t size = 0;
    std::vector<long> shape;
};

template <typename T>
class Model {
  public:
    Model(const ModelConfig& cfg, const DKConfig& dk);

    const ModelConfig& config() const { return cfg_; }
    const DKConfig& dk_config() const { return dk_; }

    // Draws fresh parameters from cfg.seed.
    void init_parameters();

    void set_parallel(bool parallel) { parallel_ = parallel; }
    bool parallel() const { return parallel_; }

    // Runs the batch through the network; per-slot post-shift distributions
    // land in probs(). The activation cache is retained for backward().
    void forward(const ModelBatch& batch);

    // [rows, vocab_size], row-major.
    const std::vector<T>& probs() const { return probs_; }
    const std::vector<T>& logits() const { return logits_; }

    void zero_grads();

    // Accumulates parameter gradients for dLoss/dlogits of the last forward
    // batch. Throws if any gradient turns non-finite, naming the parameter.
    void backward(const ModelBatch& batch, const std::vector<T>& dlogits);

    std::vector<ParamRef<T>> params();

    // Group-wise (t, d) extraction for a batch already run through forward().
    StepOutputs collect_step_outputs(const ModelBatch& batch,
                                     const std::vector<ExpandedSequence>& seqs) const;

    std::size_t param_count() const;

  private:
    ModelConfig cfg_;
    DKConfig dk_;
    bool parallel_ = true;
    std::vector<T> prior_shift_;

    struct LayerParams {
        std::vector<T> attn_norm_w, wq, wk, wv, wo, mlp_norm_w, w1, w2;
        std::vector<T> d_attn_norm_w, d_wq, d_wk, d_wv, d_wo, d_mlp_norm_w, d_w1, d_w2;
    };
    std::vector<T> embed_, d_embed_;
    std::vector<T> pause_offset_, d_pause_offset_;  // [max_pause_slots+1, dim]
    std::vector<T> final_norm_w_, d_final_norm_w_;
    std::vector<T> unembed_, d_unembed_;
    std::vector<LayerParams> layers_;

    // Activation cache for one batch.
    struct LayerActs {
        std::vector<T> x_in, n1, rstd1, q, k, v, key_in, att, attn_out;
        std::vector<T> x_mid, n2, rstd2, h1, hg;
    };
    std::vector<LayerActs> acts_;
    std::vector<T> final_in_, final_normed_, final_rstd_, logits_, probs_;
    int cached_rows_ = 0;

    void ensure_cache(const ModelBatch& batch);
    void check_batch(const ModelBatch& batch) const;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace cyb
