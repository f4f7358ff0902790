#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cxf/graph.hpp"
#include "cxf/rng.hpp"
#include "cxf/tokenizer.hpp"

// Miniature transformer encoder producing L2-normalized embeddings.
// Pre-norm blocks, learned absolute positions, configurable attention
// directionality and pooling, optional LoRA adapters on the attention
// projections. The forward pass is written once against a context concept
// and instantiated eagerly (inference) or on the autodiff graph (training).

namespace cxf {

enum class AttentionMode { causal, bidirectional };
enum class PoolingStrategy { bos, eos, mean };

inline std::string to_string(AttentionMode m) {
    return m == AttentionMode::causal ? "causal" : "bidirectional";
}
inline AttentionMode attention_from_string(const std::string& s) {
    if (s == "causal") return AttentionMode::causal;
    if (s == "bidirectional") return AttentionMode::bidirectional;
    raise_data("BadEnum", "unknown attention mode '" + s + "'");
}

inline std::string to_string(PoolingStrategy p) {
    switch (p) {
        case PoolingStrategy::bos: return "bos";
        case PoolingStrategy::eos: return "eos";
        case PoolingStrategy::mean: return "mean";
    }
    raise_invariant("BadEnum", "unreachable pooling");
}
inline PoolingStrategy pooling_from_string(const std::string& s) {
    if (s == "bos") return PoolingStrategy::bos;
    if (s == "eos") return PoolingStrategy::eos;
    if (s == "mean") return PoolingStrategy::mean;
    raise_data("BadEnum", "unknown pooling strategy '" + s + "'");
}

struct LoraConfig {
    std::size_t rank = 8;
    double alpha = 8.0;  // defaults to rank
    std::set<std::string> targets = {"wq", "wk", "wv", "wo"};
};

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t hidden_dim = 64;
    std::size_t heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t vocab_size = TokenizerConfig::vocab_size;
    std::size_t max_length = 512;
    AttentionMode attention = AttentionMode::bidirectional;
    PoolingStrategy pooling = PoolingStrategy::bos;
    std::optional<LoraConfig> lora;
    std::uint64_t seed = 1;

    void check() const {
        if (hidden_dim == 0 || heads == 0 || hidden_dim % heads != 0)
            raise_data("BadConfig", "hidden_dim must be a positive multiple of heads");
        if (max_length < 2) raise_data("BadConfig", "max_length must be >= 2");
        if (layers == 0 || ffn_dim == 0 || vocab_size == 0)
            raise_data("BadConfig", "layers, ffn_dim and vocab_size must be positive");
        if (lora) {
            if (lora->rank < 1) raise_data("RankTooLarge", "lora rank must be >= 1");
            if (lora->rank >= hidden_dim)
                raise_data("RankTooLarge", "lora rank " + std::to_string(lora->rank) +
                                               " must be below min weight dim " +
                                               std::to_string(hidden_dim));
        }
    }

    // bos pooling, bidirectional attention (the compact profile)
    static EncoderConfig small_profile() { return EncoderConfig{}; }

    // eos pooling, bidirectional attention
    static EncoderConfig large_profile() {
        EncoderConfig cfg;
        cfg.layers = 4;
        cfg.hidden_dim = 128;
        cfg.ffn_dim = 256;
        cfg.pooling = PoolingStrategy::eos;
        return cfg;
    }
};

// Named parameter tensors in fixed registration order.
template <typename T>
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        bool trainable = true;
        bool weight_decay = true;  // decay applies to weight matrices only
    };

    std::size_t add(std::string name, Tensor<T> value, bool trainable, bool weight_decay) {
        if (index_.count(name)) raise_invariant("DuplicateParam", "parameter '" + name + "' exists");
        index_[name] = entries_.size();
        entries_.push_back(Entry{std::move(name), std::move(value), trainable, weight_decay});
        return entries_.size() - 1;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const Entry& at(const std::string& name) const { return entries_[index_of(name)]; }
    Entry& at(const std::string& name) { return entries_[index_of(name)]; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) raise_invariant("UnknownParam", "no parameter '" + name + "'");
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Entry& entry(std::size_t i) { return entries_[i]; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.value.size();
        return n;
    }

    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& e : entries_)
            out.add(e.name, e.value.template cast<U>(), e.trainable, e.weight_decay);
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline bool lora_targets_weight(const EncoderConfig& cfg, const std::string& short_name) {
    return cfg.lora && cfg.lora->targets.count(short_name) > 0;
}

template <typename T>
void add_normal(ParameterStore<T>& store, Rng& rng, const std::string& name, Shape shape,
                double stddev, bool trainable, bool decay) {
    Tensor<T> t = Tensor<T>::zeros(shape);
    rng.fill_normal(t.data, 0.0, stddev);
    store.add(name, std::move(t), trainable, decay);
}

// Attention projection with optional LoRA factors. Weights are stored
// (d_out, d_in) and applied as x @ W^T.
template <typename T>
void add_linear(ParameterStore<T>& store, Rng& rng, const EncoderConfig& cfg,
                const std::string& prefix, const std::string& short_name, std::size_t d_out,
                std::size_t d_in, double stddev) {
    bool lora = lora_targets_weight(cfg, short_name);
    const std::string base = prefix + "." + short_name;
    add_normal(store, rng, base, {d_out, d_in}, stddev, /*trainable=*/!lora, /*decay=*/true);
    // bias trains in both modes
    store.add(base + "_bias", Tensor<T>::zeros({1, d_out}), true, false);
    if (lora) {
        add_normal(store, rng, base + ".lora_a", {cfg.lora->rank, d_in}, stddev, true, true);
        store.add(base + ".lora_b", Tensor<T>::zeros({d_out, cfg.lora->rank}), true, true);
    }
}

}  // namespace detail

// Parameter initialization is a pure function of (config, seed).
template <typename T>
ParameterStore<T> init_encoder_params(const EncoderConfig& cfg) {
    cfg.check();
    ParameterStore<T> store;
    Rng rng(cfg.seed);
    const double stddev = 0.02;
    detail::add_normal(store, rng, "tok_emb", {cfg.vocab_size, cfg.hidden_dim}, stddev, true, true);
    detail::add_normal(store, rng, "pos_emb", {cfg.max_length, cfg.hidden_dim}, stddev, true, true);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string p = "layer" + std::to_string(l);
        store.add(p + ".ln1.gain", Tensor<T>::full({1, cfg.hidden_dim}, T(1)), true, false);
        store.add(p + ".ln1.bias", Tensor<T>::zeros({1, cfg.hidden_dim}), true, false);
        detail::add_linear(store, rng, cfg, p + ".attn", "wq", cfg.hidden_dim, cfg.hidden_dim, stddev);
        detail::add_linear(store, rng, cfg, p + ".attn", "wk", cfg.hidden_dim, cfg.hidden_dim, stddev);
        detail::add_linear(store, rng, cfg, p + ".attn", "wv", cfg.hidden_dim, cfg.hidden_dim, stddev);
        detail::add_linear(store, rng, cfg, p + ".attn", "wo", cfg.hidden_dim, cfg.hidden_dim, stddev);
        store.add(p + ".ln2.gain", Tensor<T>::full({1, cfg.hidden_dim}, T(1)), true, false);
        store.add(p + ".ln2.bias", Tensor<T>::zeros({1, cfg.hidden_dim}), true, false);
        detail::add_linear(store, rng, cfg, p + ".ffn", "w1", cfg.ffn_dim, cfg.hidden_dim, stddev);
        detail::add_linear(store, rng, cfg, p + ".ffn", "w2", cfg.hidden_dim, cfg.ffn_dim, stddev);
    }
    store.add("final_ln.gain", Tensor<T>::full({1, cfg.hidden_dim}, T(1)), true, false);
    store.add("final_ln.bias", Tensor<T>::zeros({1, cfg.hidden_dim}), true, false);
    return store;
}

// effective = base + (alpha/rank) * B @ A; RankTooLarge when the factors
// cannot be low-rank for the base shape.
template <typename T>
Tensor<T> lora_apply(const Tensor<T>& base, const Tensor<T>& a, const Tensor<T>& b, double alpha,
                     std::size_t rank) {
    if (rank == 0 || rank >= std::min(base.rows(), base.cols()))
        raise_data("RankTooLarge", "lora rank " + std::to_string(rank) + " vs base " +
                                       shape_str(base.shape));
    if (a.rows() != rank || a.cols() != base.cols() || b.rows() != base.rows() || b.cols() != rank)
        shape_error("lora_apply", a.shape, b.shape);
    return ops::add(base, ops::scale(ops::matmul(b, a), T(alpha / static_cast<double>(rank))));
}

// Additive position x position mask: 0 on visible entries, -inf on masked.
// bidirectional hides PAD keys; causal additionally hides future keys.
template <typename T>
Tensor<T> build_attention_mask(std::span<const std::uint8_t> pad_mask, AttentionMode mode) {
    const std::size_t n = pad_mask.size();
    Tensor<T> m = Tensor<T>::zeros({n, n});
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (std::size_t q = 0; q < n; ++q)
        for (std::size_t k = 0; k < n; ++k)
            if (!pad_mask[k] || (mode == AttentionMode::causal && k > q)) m.at(q, k) = neg_inf;
    return m;
}

// Collapses per-token hidden states into one vector.
template <typename T>
Tensor<T> pool(const Tensor<T>& hidden, std::span<const std::uint8_t> mask,
               PoolingStrategy strategy) {
    if (hidden.rows() != mask.size()) shape_error("pool", hidden.shape);
    std::size_t real = 0;
    std::size_t last_real = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            ++real;
            last_real = i;
        }
    if (real == 0) raise_data("AllPadding", "pool: no real positions in mask");
    switch (strategy) {
        case PoolingStrategy::bos: return ops::slice_rows(hidden, 0, 1);
        case PoolingStrategy::eos: return ops::slice_rows(hidden, last_real, last_real + 1);
        case PoolingStrategy::mean: {
            Tensor<T> out = Tensor<T>::zeros({1, hidden.cols()});
            for (std::size_t i = 0; i < hidden.rows(); ++i) {
                if (!mask[i]) continue;
                for (std::size_t j = 0; j < hidden.cols(); ++j) out.at(0, j) += hidden.at(i, j);
            }
            for (std::size_t j = 0; j < hidden.cols(); ++j) out.at(0, j) /= T(real);
            return out;
        }
    }
    raise_invariant("BadEnum", "unreachable pooling");
}

// ---- forward-pass contexts ----

// Eager context: handles are tensors, ops run immediately.
template <typename T>
struct EagerContext {
    using Handle = Tensor<T>;
    const ParameterStore<T>* params;

    Handle param(const std::string& name) { return params->at(name).value; }
    Handle constant(Tensor<T> v) { return v; }
    Handle matmul(const Handle& a, const Handle& b) { return ops::matmul(a, b); }
    Handle matmul_nt(const Handle& a, const Handle& b) { return ops::matmul_nt(a, b); }
    Handle add(const Handle& a, const Handle& b) { return ops::add(a, b); }
    Handle add_rowvec(const Handle& a, const Handle& v) { return ops::add_rowvec(a, v); }
    Handle scale(const Handle& a, T s) { return ops::scale(a, s); }
    Handle row_softmax(const Handle& a) { return ops::row_softmax(a); }
    Handle layer_norm(const Handle& x, const Handle& g, const Handle& b, T eps) {
        return ops::layer_norm(x, g, b, eps);
    }
    Handle gelu(const Handle& a) { return ops::gelu(a); }
    Handle embedding_lookup(const Handle& t, std::vector<int> ids) {
        return ops::embedding_lookup<T>(t, ids);
    }
    Handle concat_rows(const Handle& a, const Handle& b) { return ops::concat_rows(a, b); }
    Handle concat_cols(const Handle& a, const Handle& b) { return ops::concat_cols(a, b); }
    Handle slice_rows(const Handle& a, std::size_t r0, std::size_t r1) {
        return ops::slice_rows(a, r0, r1);
    }
    Handle slice_cols(const Handle& a, std::size_t c0, std::size_t c1) {
        return ops::slice_cols(a, c0, c1);
    }
    Handle l2_normalize_rows(const Handle& a) { return ops::l2_normalize_rows(a); }
};

// Graph context: handles are node ids; parameter leaves are created on
// first use and remembered for gradient collection.
template <typename T>
struct GraphContext {
    using Handle = typename Graph<T>::NodeId;
    Graph<T>* graph;
    const ParameterStore<T>* params;
    std::unordered_map<std::string, Handle> param_nodes;

    Handle param(const std::string& name) {
        auto it = param_nodes.find(name);
        if (it != param_nodes.end()) return it->second;
        const auto& entry = params->at(name);
        Tensor<T> v = entry.value;
        v.requires_grad = entry.trainable;
        Handle h = graph->leaf(std::move(v));
        param_nodes.emplace(name, h);
        return h;
    }
    Handle constant(Tensor<T> v) { return graph->constant(std::move(v)); }
    Handle matmul(Handle a, Handle b) { return graph->matmul(a, b); }
    Handle matmul_nt(Handle a, Handle b) { return graph->matmul_nt(a, b); }
    Handle add(Handle a, Handle b) { return graph->add(a, b); }
    Handle add_rowvec(Handle a, Handle v) { return graph->add_rowvec(a, v); }
    Handle scale(Handle a, T s) { return graph->scale(a, s); }
    Handle row_softmax(Handle a) { return graph->row_softmax(a); }
    Handle layer_norm(Handle x, Handle g, Handle b, T eps) { return graph->layer_norm(x, g, b, eps); }
    Handle gelu(Handle a) { return graph->gelu(a); }
    Handle embedding_lookup(Handle t, std::vector<int> ids) {
        return graph->embedding_lookup(t, std::move(ids));
    }
    Handle concat_rows(Handle a, Handle b) { return graph->concat_rows(a, b); }
    Handle concat_cols(Handle a, Handle b) { return graph->concat_cols(a, b); }
    Handle slice_rows(Handle a, std::size_t r0, std::size_t r1) {
        return graph->slice_rows(a, r0, r1);
    }
    Handle slice_cols(Handle a, std::size_t c0, std::size_t c1) {
        return graph->slice_cols(a, c0, c1);
    }
    Handle l2_normalize_rows(Handle a) { return graph->l2_normalize_rows(a); }
};

namespace detail {

template <typename T, class Ctx>
typename Ctx::Handle linear_weight(Ctx& ctx, const EncoderConfig& cfg, const std::string& prefix,
                                   const std::string& short_name) {
    auto base = ctx.param(prefix + "." + short_name);
    if (!lora_targets_weight(cfg, short_name)) return base;
    auto a = ctx.param(prefix + "." + short_name + ".lora_a");
    auto b = ctx.param(prefix + "." + short_name + ".lora_b");
    T s = T(cfg.lora->alpha / static_cast<double>(cfg.lora->rank));
    return ctx.add(base, ctx.scale(ctx.matmul(b, a), s));
}

// x @ W^T + bias
template <typename T, class Ctx>
typename Ctx::Handle linear(Ctx& ctx, const EncoderConfig& cfg, typename Ctx::Handle x,
                            const std::string& prefix, const std::string& short_name) {
    auto w = linear_weight<T>(ctx, cfg, prefix, short_name);
    return ctx.add_rowvec(ctx.matmul_nt(x, w), ctx.param(prefix + "." + short_name + "_bias"));
}

// One sequence through the transformer stack; returns (width, hidden).
template <typename T, class Ctx>
typename Ctx::Handle sequence_hidden(Ctx& ctx, const EncoderConfig& cfg,
                                     const std::vector<int>& ids,
                                     const std::vector<std::uint8_t>& pad_mask) {
    const std::size_t n = ids.size();
    const std::size_t d_head = cfg.hidden_dim / cfg.heads;
    const T ln_eps = T(1e-5);

    auto x = ctx.embedding_lookup(ctx.param("tok_emb"), ids);
    auto pos = ctx.slice_rows(ctx.param("pos_emb"), 0, n);
    x = ctx.add(x, pos);

    Tensor<T> attn_mask = build_attention_mask<T>(pad_mask, cfg.attention);
    const T attn_scale = T(1) / std::sqrt(T(d_head));

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l);
        auto normed = ctx.layer_norm(x, ctx.param(p + ".ln1.gain"), ctx.param(p + ".ln1.bias"), ln_eps);
        auto q = linear<T>(ctx, cfg, normed, p + ".attn", "wq");
        auto k = linear<T>(ctx, cfg, normed, p + ".attn", "wk");
        auto v = linear<T>(ctx, cfg, normed, p + ".attn", "wv");

        typename Ctx::Handle heads_out{};
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            auto qh = ctx.slice_cols(q, h * d_head, (h + 1) * d_head);
            auto kh = ctx.slice_cols(k, h * d_head, (h + 1) * d_head);
            auto vh = ctx.slice_cols(v, h * d_head, (h + 1) * d_head);
            auto scores = ctx.scale(ctx.matmul_nt(qh, kh), attn_scale);
            scores = ctx.add(scores, ctx.constant(attn_mask));
            auto probs = ctx.row_softmax(scores);
            auto oh = ctx.matmul(probs, vh);
            heads_out = (h == 0) ? oh : ctx.concat_cols(heads_out, oh);
        }
        auto attn_out = linear<T>(ctx, cfg, heads_out, p + ".attn", "wo");
        x = ctx.add(x, attn_out);

        auto normed2 = ctx.layer_norm(x, ctx.param(p + ".ln2.gain"), ctx.param(p + ".ln2.bias"), ln_eps);
        auto up = ctx.gelu(linear<T>(ctx, cfg, normed2, p + ".ffn", "w1"));
        auto down = linear<T>(ctx, cfg, up, p + ".ffn", "w2");
        x = ctx.add(x, down);
    }
    return ctx.layer_norm(x, ctx.param("final_ln.gain"), ctx.param("final_ln.bias"), ln_eps);
}

// Pooling as a constant selector row: bos/eos pick one position, mean
// weighs real positions uniformly. Keeps pooling differentiable through
// a plain matmul.
template <typename T>
Tensor<T> pooling_selector(const std::vector<std::uint8_t>& mask, PoolingStrategy strategy) {
    const std::size_t n = mask.size();
    std::size_t real = 0, last_real = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) {
            ++real;
            last_real = i;
        }
    if (real == 0) raise_data("AllPadding", "encode: sequence with no real tokens");
    Tensor<T> sel = Tensor<T>::zeros({1, n});
    switch (strategy) {
        case PoolingStrategy::bos: sel.at(0, 0) = T(1); break;
        case PoolingStrategy::eos: sel.at(0, last_real) = T(1); break;
        case PoolingStrategy::mean:
            for (std::size_t i = 0; i < n; ++i)
                if (mask[i]) sel.at(0, i) = T(1) / T(real);
            break;
    }
    return sel;
}

}  // namespace detail

// Shared forward pass: (batch of token rows) -> (batch, hidden_dim) of
// L2-normalized pooled embeddings.
template <typename T, class Ctx>
typename Ctx::Handle encoder_forward(Ctx& ctx, const EncoderConfig& cfg, const TokenBatch& batch) {
    if (batch.size() == 0) raise_data("EmptyBatch", "encoder_forward: no sequences");
    typename Ctx::Handle pooled{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto hidden = detail::sequence_hidden<T>(ctx, cfg, batch.ids[i], batch.mask[i]);
        auto sel = ctx.constant(detail::pooling_selector<T>(batch.mask[i], cfg.pooling));
        auto row = ctx.matmul(sel, hidden);
        pooled = (i == 0) ? row : ctx.concat_rows(pooled, row);
    }
    return ctx.l2_normalize_rows(pooled);
}

// Inference entry point: deterministic for fixed (texts, params, config).
template <typename T>
Tensor<T> encode_batch(std::span<const std::string> texts, const EncoderConfig& cfg,
                       const ParameterStore<T>& params) {
    if (texts.empty()) raise_data("EmptyBatch", "encode_batch: no texts");
    TokenBatch batch = make_token_batch(texts, cfg.max_length);
    EagerContext<T> ctx{&params};
    return encoder_forward<T>(ctx, cfg, batch);
}

// Convenience wrapper encoding in fixed-size slices to bound peak memory.
template <typename T>
Tensor<T> encode_all(std::span<const std::string> texts, const EncoderConfig& cfg,
                     const ParameterStore<T>& params, std::size_t slice = 32) {
    if (texts.empty()) raise_data("EmptyBatch", "encode_all: no texts");
    Tensor<T> out = Tensor<T>::zeros({texts.size(), cfg.hidden_dim});
    for (std::size_t start = 0; start < texts.size(); start += slice) {
        std::size_t stop = std::min(texts.size(), start + slice);
        Tensor<T> part = encode_batch<T>(texts.subspan(start, stop - start), cfg, params);
        std::copy(part.data.begin(), part.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(start * cfg.hidden_dim));
    }
    return out;
}

}  // namespace cxf
