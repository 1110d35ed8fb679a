// SPDX-License-Identifier: Apache-2.0

#include "cyb/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cyb/kernels.hpp"
#include "cyb/rng.hpp"

// Dispatch onto the OpenMP kernels or the serial reference path. Both produce
// bit-identical results; the flag exists for the determinism contract and for
// benchmarking one against the other.
#define CYB_K(fn, ...)                        \
    do {                                      \
        if (parallel_) {                      \
            kernels::fn(__VA_ARGS__);         \
        } else {                              \
            kernels::ref::fn(__VA_ARGS__);    \
        }                                     \
    } while (0)

namespace cyb {

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.vocab_size < 4) throw std::invalid_argument("model.vocab_size must be >= 4");
    if (cfg.dim < 2) throw std::invalid_argument("model.dim must be >= 2");
    if (cfg.n_layers < 1) throw std::invalid_argument("model.n_layers must be >= 1");
    if (cfg.n_heads < 1) throw std::invalid_argument("model.n_heads must be >= 1");
    if (cfg.dim % cfg.n_heads != 0) {
        throw std::invalid_argument("model.dim must be divisible by n_heads");
    }
    if (cfg.head_dim() % 2 != 0) {
        throw std::invalid_argument("model head size must be even for rotary phases");
    }
    if (cfg.max_pause_slots < 0) {
        throw std::invalid_argument("model.max_pause_slots must be >= 0");
    }
}

ModelBatch make_model_batch(const std::vector<ExpandedSequence>& seqs) {
    ModelBatch batch;
    batch.seq_offsets.push_back(0);
    for (const auto& seq : seqs) {
        for (int i = 0; i < seq.size(); ++i) {
            batch.ids.push_back(seq.ids[i]);
            batch.positions.push_back(seq.positions[i]);
            batch.pause_slots.push_back(seq.pause_slot[i]);
        }
        batch.seq_offsets.push_back(batch.rows());
    }
    return batch;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, const DKConfig& dk) : cfg_(cfg), dk_(dk) {
    validate_model_config(cfg_);
    validate_dk_config(dk_);
    if (dk_.vocab_size != cfg_.vocab_size) {
        throw std::invalid_argument("dk.vocab_size must match model.vocab_size");
    }
    const std::size_t dim = cfg_.dim;
    const std::size_t hid = cfg_.hidden_dim();
    const std::size_t vocab = cfg_.vocab_size;
    embed_.assign(vocab * dim, T(0));
    d_embed_.assign(vocab * dim, T(0));
    pause_offset_.assign((cfg_.max_pause_slots + 1) * dim, T(0));
    d_pause_offset_.assign((cfg_.max_pause_slots + 1) * dim, T(0));
    final_norm_w_.assign(dim, T(1));
    d_final_norm_w_.assign(dim, T(0));
    unembed_.assign(vocab * dim, T(0));
    d_unembed_.assign(vocab * dim, T(0));
    layers_.resize(cfg_.n_layers);
    for (auto& l : layers_) {
        l.attn_norm_w.assign(dim, T(1));
        l.wq.assign(dim * dim, T(0));
        l.wk.assign(dim * dim, T(0));
        l.wv.assign(dim * dim, T(0));
        l.wo.assign(dim * dim, T(0));
        l.mlp_norm_w.assign(dim, T(1));
        l.w1.assign(hid * dim, T(0));
        l.w2.assign(dim * hid, T(0));
        l.d_attn_norm_w.assign(dim, T(0));
        l.d_wq.assign(dim * dim, T(0));
        l.d_wk.assign(dim * dim, T(0));
        l.d_wv.assign(dim * dim, T(0));
        l.d_wo.assign(dim * dim, T(0));
        l.d_mlp_norm_w.assign(dim, T(0));
        l.d_w1.assign(hid * dim, T(0));
        l.d_w2.assign(dim * hid, T(0));
    }
    const std::vector<double> shift = prior_shift_vector(dk_);
    prior_shift_.resize(shift.size());
    for (std::size_t i = 0; i < shift.size(); ++i) prior_shift_[i] = static_cast<T>(shift[i]);
    init_parameters();
}

template <typename T>
void Model<T>::init_parameters() {
    SplitMix64 rng(cfg_.seed);
    const double proj_std = 0.02;
    // Residual-output projections get shrunk so the stream's variance stays
    // flat across depth.
    const double out_std = proj_std / std::sqrt(2.0 * cfg_.n_layers);
    auto fill_normal = [&rng](std::vector<T>& v, double std) {
        for (auto& x : v) x = static_cast<T>(rng.next_normal() * std);
    };
    fill_normal(embed_, proj_std);
    for (auto& l : layers_) {
        fill_normal(l.wq, proj_std);
        fill_normal(l.wk, proj_std);
        fill_normal(l.wv, proj_std);
        fill_normal(l.wo, out_std);
        fill_normal(l.w1, proj_std);
        fill_normal(l.w2, out_std);
        std::fill(l.attn_norm_w.begin(), l.attn_norm_w.end(), T(1));
        std::fill(l.mlp_norm_w.begin(), l.mlp_norm_w.end(), T(1));
    }
    std::fill(final_norm_w_.begin(), final_norm_w_.end(), T(1));
    fill_normal(unembed_, proj_std);
    std::fill(pause_offset_.begin(), pause_offset_.end(), T(0));
}

template <typename T>
void Model<T>::check_batch(const ModelBatch& batch) const {
    if (batch.seq_offsets.empty() || batch.seq_offsets.front() != 0 ||
        batch.seq_offsets.back() != batch.rows()) {
        throw std::invalid_argument("model batch sequence offsets are inconsistent");
    }
    for (int s = 1; s < static_cast<int>(batch.seq_offsets.size()); ++s) {
        if (batch.seq_offsets[s] < batch.seq_offsets[s - 1]) {
            throw std::invalid_argument("model batch sequence offsets must be non-decreasing");
        }
    }
    for (int r = 0; r < batch.rows(); ++r) {
        if (batch.ids[r] < 0 || batch.ids[r] >= cfg_.vocab_size) {
            throw std::invalid_argument("token id outside the model vocabulary");
        }
        if (batch.positions[r] < 0) {
            throw std::invalid_argument("negative position index");
        }
        if (batch.pause_slots[r] < 0 || batch.pause_slots[r] > cfg_.max_pause_slots) {
            throw std::invalid_argument("pause slot outside the model's pause range");
        }
    }
}

template <typename T>
void Model<T>::ensure_cache(const ModelBatch& batch) {
    const std::size_t rows = batch.rows();
    const std::size_t dim = cfg_.dim;
    const std::size_t hid = cfg_.hidden_dim();
    const std::size_t vocab = cfg_.vocab_size;
    std::size_t att_total = 0;
    for (int s = 0; s < batch.n_seqs(); ++s) {
        const std::size_t t_len = batch.seq_offsets[s + 1] - batch.seq_offsets[s];
        att_total += static_cast<std::size_t>(cfg_.n_heads) * t_len * t_len;
    }
    acts_.resize(cfg_.n_layers);
    for (auto& a : acts_) {
        a.x_in.assign(rows * dim, T(0));
        a.n1.assign(rows * dim, T(0));
        a.rstd1.assign(rows, T(0));
        a.q.assign(rows * dim, T(0));
        a.k.assign(rows * dim, T(0));
        a.v.assign(rows * dim, T(0));
        a.key_in.assign(rows * dim, T(0));
        a.att.assign(att_total, T(0));
        a.attn_out.assign(rows * dim, T(0));
        a.x_mid.assign(rows * dim, T(0));
        a.n2.assign(rows * dim, T(0));
        a.rstd2.assign(rows, T(0));
        a.h1.assign(rows * hid, T(0));
        a.hg.assign(rows * hid, T(0));
    }
    final_in_.assign(rows * dim, T(0));
    final_normed_.assign(rows * dim, T(0));
    final_rstd_.assign(rows, T(0));
    logits_.assign(rows * vocab, T(0));
    probs_.assign(rows * vocab, T(0));
    cached_rows_ = static_cast<int>(rows);
}

template <typename T>
void Model<T>::forward(const ModelBatch& batch) {
    check_batch(batch);
    ensure_cache(batch);
    const int rows = batch.rows();
    const int dim = cfg_.dim;
    const int hid = cfg_.hidden_dim();
    const int vocab = cfg_.vocab_size;
    const T eps = static_cast<T>(1e-5);

    std::vector<T> x(static_cast<std::size_t>(rows) * dim);
    CYB_K(embedding_forward, x.data(), batch.ids.data(), embed_.data(), rows, dim);

    for (int li = 0; li < cfg_.n_layers; ++li) {
        auto& p = layers_[li];
        auto& a = acts_[li];
        a.x_in = x;
        CYB_K(rmsnorm_forward, a.n1.data(), a.rstd1.data(), a.x_in.data(), p.attn_norm_w.data(),
              rows, dim, eps);
        CYB_K(linear_forward, a.q.data(), a.n1.data(), p.wq.data(), rows, dim, dim);
        CYB_K(linear_forward, a.v.data(), a.n1.data(), p.wv.data(), rows, dim, dim);
        a.key_in = a.n1;
        if (cfg_.use_pause_key_offset) {
            std::vector<T> offs(static_cast<std::size_t>(rows) * dim);
            CYB_K(embedding_forward, offs.data(), batch.pause_slots.data(), pause_offset_.data(),
                  rows, dim);
            CYB_K(add_inplace, a.key_in.data(), offs.data(), a.key_in.size());
        }
        CYB_K(linear_forward, a.k.data(), a.key_in.data(), p.wk.data(), rows, dim, dim);
        CYB_K(rope_forward, a.q.data(), batch.positions.data(), rows, cfg_.n_heads,
              cfg_.head_dim(), static_cast<T>(cfg_.rope_base));
        CYB_K(rope_forward, a.k.data(), batch.positions.data(), rows, cfg_.n_heads,
              cfg_.head_dim(), static_cast<T>(cfg_.rope_base));
        std::size_t att_off = 0;
        for (int s = 0; s < batch.n_seqs(); ++s) {
            const int begin = batch.seq_offsets[s];
            const int t_len = batch.seq_offsets[s + 1] - begin;
            if (t_len == 0) continue;
            const std::size_t row_off = static_cast<std::size_t>(begin) * dim;
            CYB_K(attention_forward, a.attn_out.data() + row_off, a.att.data() + att_off,
                  a.q.data() + row_off, a.k.data() + row_off, a.v.data() + row_off, t_len,
                  cfg_.n_heads, cfg_.head_dim());
            att_off += static_cast<std::size_t>(cfg_.n_heads) * t_len * t_len;
        }
        std::vector<T> proj(static_cast<std::size_t>(rows) * dim);
        CYB_K(linear_forward, proj.data(), a.attn_out.data(), p.wo.data(), rows, dim, dim);
        CYB_K(add_inplace, x.data(), proj.data(), x.size());
        a.x_mid = x;
        CYB_K(rmsnorm_forward, a.n2.data(), a.rstd2.data(), a.x_mid.data(), p.mlp_norm_w.data(),
              rows, dim, eps);
        CYB_K(linear_forward, a.h1.data(), a.n2.data(), p.w1.data(), rows, hid, dim);
        CYB_K(gelu_forward, a.hg.data(), a.h1.data(), a.h1.size());
        std::vector<T> mlp_out(static_cast<std::size_t>(rows) * dim);
        CYB_K(linear_forward, mlp_out.data(), a.hg.data(), p.w2.data(), rows, dim, hid);
        CYB_K(add_inplace, x.data(), mlp_out.data(), x.size());
    }

    final_in_ = x;
    CYB_K(rmsnorm_forward, final_normed_.data(), final_rstd_.data(), final_in_.data(),
          final_norm_w_.data(), rows, dim, eps);
    CYB_K(linear_forward, logits_.data(), final_normed_.data(), unembed_.data(), rows, vocab,
          dim);
    CYB_K(add_row_vector, logits_.data(), prior_shift_.data(), rows, vocab);
    CYB_K(softmax_rows, probs_.data(), logits_.data(), rows, vocab);
}

template <typename T>
void Model<T>::zero_grads() {
    auto zero = [](std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); };
    zero(d_embed_);
    zero(d_pause_offset_);
    zero(d_final_norm_w_);
    zero(d_unembed_);
    for (auto& l : layers_) {
        zero(l.d_attn_norm_w);
        zero(l.d_wq);
        zero(l.d_wk);
        zero(l.d_wv);
        zero(l.d_wo);
        zero(l.d_mlp_norm_w);
        zero(l.d_w1);
        zero(l.d_w2);
    }
}

template <typename T>
void Model<T>::backward(const ModelBatch& batch, const std::vector<T>& dlogits) {
    if (batch.rows() != cached_rows_) {
        throw std::invalid_argument("backward batch does not match the cached forward batch");
    }
    const int rows = batch.rows();
    const int dim = cfg_.dim;
    const int hid = cfg_.hidden_dim();
    const int vocab = cfg_.vocab_size;
    if (dlogits.size() != static_cast<std::size_t>(rows) * vocab) {
        throw std::invalid_argument("dlogits size must be rows x vocab");
    }

    // Head. The prior shift is additive, so it is transparent to gradients.
    CYB_K(linear_backward_weight, d_unembed_.data(), dlogits.data(), final_normed_.data(), rows,
          vocab, dim);
    std::vector<T> dnormed(static_cast<std::size_t>(rows) * dim);
    CYB_K(linear_backward_input, dnormed.data(), dlogits.data(), unembed_.data(), rows, vocab,
          dim);
    CYB_K(rmsnorm_backward_weight, d_final_norm_w_.data(), dnormed.data(), final_in_.data(),
          final_rstd_.data(), rows, dim);
    std::vector<T> dx(static_cast<std::size_t>(rows) * dim);
    CYB_K(rmsnorm_backward_input, dx.data(), dnormed.data(), final_in_.data(),
          final_norm_w_.data(), final_rstd_.data(), rows, dim);

    std::vector<T> dtmp(static_cast<std::size_t>(rows) * dim);
    std::vector<T> dhg(static_cast<std::size_t>(rows) * hid);
    std::vector<T> dh1(static_cast<std::size_t>(rows) * hid);
    std::vector<T> dn(static_cast<std::size_t>(rows) * dim);
    std::vector<T> dq(static_cast<std::size_t>(rows) * dim);
    std::vector<T> dk(static_cast<std::size_t>(rows) * dim);
    std::vector<T> dv(static_cast<std::size_t>(rows) * dim);
    std::vector<T> dattn(static_cast<std::size_t>(rows) * dim);

    for (int li = cfg_.n_layers - 1; li >= 0; --li) {
        auto& p = layers_[li];
        auto& a = acts_[li];
        // MLP half: x_out = x_mid + w2 gelu(w1 n2).
        CYB_K(linear_backward_weight, p.d_w2.data(), dx.data(), a.hg.data(), rows, dim, hid);
        CYB_K(linear_backward_input, dhg.data(), dx.data(), p.w2.data(), rows, dim, hid);
        CYB_K(gelu_backward, dh1.data(), dhg.data(), a.h1.data(), a.h1.size());
        CYB_K(linear_backward_weight, p.d_w1.data(), dh1.data(), a.n2.data(), rows, hid, dim);
        CYB_K(linear_backward_input, dn.data(), dh1.data(), p.w1.data(), rows, hid, dim);
        CYB_K(rmsnorm_backward_weight, p.d_mlp_norm_w.data(), dn.data(), a.x_mid.data(),
              a.rstd2.data(), rows, dim);
        CYB_K(rmsnorm_backward_input, dtmp.data(), dn.data(), a.x_mid.data(),
              p.mlp_norm_w.data(), a.rstd2.data(), rows, dim);
        CYB_K(add_inplace, dx.data(), dtmp.data(), dx.size());

        // Attention half: x_mid = x_in + wo attn(q, k, v).
        CYB_K(linear_backward_weight, p.d_wo.data(), dx.data(), a.attn_out.data(), rows, dim,
              dim);
        CYB_K(linear_backward_input, dattn.data(), dx.data(), p.wo.data(), rows, dim, dim);
        std::size_t att_off = 0;
        std::vector<T> dscore;
        for (int s = 0; s < batch.n_seqs(); ++s) {
            const int begin = batch.seq_offsets[s];
            const int t_len = batch.seq_offsets[s + 1] - begin;
            if (t_len == 0) continue;
            const std::size_t row_off = static_cast<std::size_t>(begin) * dim;
            const std::size_t att_size =
                static_cast<std::size_t>(cfg_.n_heads) * t_len * t_len;
            if (dscore.size() < att_size) dscore.resize(att_size);
            CYB_K(attention_backward, dq.data() + row_off, dk.data() + row_off,
                  dv.data() + row_off, dscore.data(), dattn.data() + row_off,
                  a.att.data() + att_off, a.q.data() + row_off, a.k.data() + row_off,
                  a.v.data() + row_off, t_len, cfg_.n_heads, cfg_.head_dim());
            att_off += att_size;
        }
        CYB_K(rope_backward, dq.data(), batch.positions.data(), rows, cfg_.n_heads,
              cfg_.head_dim(), static_cast<T>(cfg_.rope_base));
        CYB_K(rope_backward, dk.data(), batch.positions.data(), rows, cfg_.n_heads,
              cfg_.head_dim(), static_cast<T>(cfg_.rope_base));
        CYB_K(linear_backward_weight, p.d_wq.data(), dq.data(), a.n1.data(), rows, dim, dim);
        CYB_K(linear_backward_input, dn.data(), dq.data(), p.wq.data(), rows, dim, dim);
        CYB_K(linear_backward_weight, p.d_wv.data(), dv.data(), a.n1.data(), rows, dim, dim);
        CYB_K(linear_backward_input, dtmp.data(), dv.data(), p.wv.data(), rows, dim, dim);
        CYB_K(add_inplace, dn.data(), dtmp.data(), dn.size());
        CYB_K(linear_backward_weight, p.d_wk.data(), dk.data(), a.key_in.data(), rows, dim, dim);
        CYB_K(linear_backward_input, dtmp.data(), dk.data(), p.wk.data(), rows, dim, dim);
        if (cfg_.use_pause_key_offset) {
            CYB_K(embedding_backward, d_pause_offset_.data(), batch.pause_slots.data(),
                  dtmp.data(), rows, dim);
        }
        CYB_K(add_inplace, dn.data(), dtmp.data(), dn.size());
        CYB_K(rmsnorm_backward_weight, p.d_attn_norm_w.data(), dn.data(), a.x_in.data(),
              a.rstd1.data(), rows, dim);
        CYB_K(rmsnorm_backward_input, dtmp.data(), dn.data(), a.x_in.data(),
              p.attn_norm_w.data(), a.rstd1.data(), rows, dim);
        CYB_K(add_inplace, dx.data(), dtmp.data(), dx.size());
    }
    CYB_K(embedding_backward, d_embed_.data(), batch.ids.data(), dx.data(), rows, dim);

    for (const auto& ref : params()) {
        for (std::size_t i = 0; i < ref.size; ++i) {
            if (!std::isfinite(static_cast<double>(ref.grad[i]))) {
                throw std::runtime_error("non-finite gradient in parameter " + ref.name);
            }
        }
    }
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
    std::vector<ParamRef<T>> refs;
    auto add = [&refs](const std::string& name, std::vector<T>& v, std::vector<T>& g,
                       std::vector<long> shape) {
        refs.push_back(ParamRef<T>{name, v.data(), g.data(), v.size(), std::move(shape)});
    };
    add("embed", embed_, d_embed_, {cfg_.vocab_size, cfg_.dim});
    add("pause_key_offset", pause_offset_, d_pause_offset_,
        {cfg_.max_pause_slots + 1, cfg_.dim});
    for (int li = 0; li < cfg_.n_layers; ++li) {
        auto& l = layers_[li];
        const std::string prefix = "layer" + std::to_string(li) + ".";
        add(prefix + "attn_norm.w", l.attn_norm_w, l.d_attn_norm_w, {cfg_.dim});
        add(prefix + "wq", l.wq, l.d_wq, {cfg_.dim, cfg_.dim});
        add(prefix + "wk", l.wk, l.d_wk, {cfg_.dim, cfg_.dim});
        add(prefix + "wv", l.wv, l.d_wv, {cfg_.dim, cfg_.dim});
        add(prefix + "wo", l.wo, l.d_wo, {cfg_.dim, cfg_.dim});
        add(prefix + "mlp_norm.w", l.mlp_norm_w, l.d_mlp_norm_w, {cfg_.dim});
        add(prefix + "w1", l.w1, l.d_w1, {cfg_.hidden_dim(), cfg_.dim});
        add(prefix + "w2", l.w2, l.d_w2, {cfg_.dim, cfg_.hidden_dim()});
    }
    add("final_norm.w", final_norm_w_, d_final_norm_w_, {cfg_.dim});
    add("unembed", unembed_, d_unembed_, {cfg_.vocab_size, cfg_.dim});
    return refs;
}

template <typename T>
std::size_t Model<T>::param_count() const {
    std::size_t n = 0;
    for (auto& ref : const_cast<Model<T>*>(this)->params()) n += ref.size;
    return n;
}

template <typename T>
StepOutputs Model<T>::collect_step_outputs(const ModelBatch& batch,
                                           const std::vector<ExpandedSequence>& seqs) const {
    if (static_cast<int>(batch.seq_offsets.size()) != static_cast<int>(seqs.size()) + 1) {
        throw std::invalid_argument("batch and sequence list disagree");
    }
    if (batch.rows() != cached_rows_) {
        throw std::invalid_argument("collect_step_outputs requires a prior forward on the batch");
    }
    const int vocab = cfg_.vocab_size;
    const int dk_id = dk_.dk_token_id;
    StepOutputs out;
    for (std::size_t si = 0; si < seqs.size(); ++si) {
        const auto& seq = seqs[si];
        const int base = batch.seq_offsets[si];
        int i = 0;
        while (i < seq.size()) {
            if (seq.pause_slot[i] != 0) {
                throw std::invalid_argument("malformed pause_slot ordering in expanded sequence");
            }
            int w = 1;
            while (i + w < seq.size() && seq.pause_slot[i + w] != 0) ++w;
            StepOutputs::Group group;
            group.seq_index = static_cast<int>(si);
            group.first_row = base + i;
            group.context = seq.ids[i];
            group.target = seq.target[i];
            group.d.resize(w);
            if (group.target != kMaskId) group.t.resize(w);
            for (int j = 0; j < w; ++j) {
                const std::size_t row = static_cast<std::size_t>(base + i + j) * vocab;
                const double ydk = static_cast<double>(probs_[row + dk_id]);
                const double d = std::min(1.0, std::max(0.0, ydk));
                group.d[j] = (j + 1 < w) ? d : 0.0;  // final granted step cannot abstain
                if (group.target != kMaskId) {
                    const double yt = static_cast<double>(probs_[row + group.target]);
                    const double denom = std::max(1.0 - d, 1e-12);
                    group.t[j] = std::min(1.0, yt / denom);
                }
            }
            out.groups.push_back(std::move(group));
            i += w;
        }
    }
    return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace cyb

#undef CYB_K
