#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxf/error.hpp"

namespace cxf {

// Byte-level tokenizer: BOS + (byte+3) ids + EOS. Specials sit below the
// byte range so the encoding is injective.
struct TokenizerConfig {
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int byte_offset = 3;
    static constexpr std::size_t vocab_size = 256 + 3;
};

// Truncation keeps the head of the text and always retains BOS plus a final
// EOS, so eos pooling never lands on an arbitrary mid-sequence byte.
inline std::vector<int> tokenize(std::string_view text, std::size_t max_length) {
    if (max_length < 2)
        raise_invariant("MaxLengthTooSmall", "max_length must fit BOS and EOS");
    std::size_t body = std::min(text.size(), max_length - 2);
    std::vector<int> ids;
    ids.reserve(body + 2);
    ids.push_back(TokenizerConfig::bos_id);
    for (std::size_t i = 0; i < body; ++i)
        ids.push_back(static_cast<int>(static_cast<unsigned char>(text[i])) +
                      TokenizerConfig::byte_offset);
    ids.push_back(TokenizerConfig::eos_id);
    return ids;
}

// Batch of right-padded token rows plus the 0/1 attention mask.
struct TokenBatch {
    std::size_t width = 0;                        // common padded length
    std::vector<std::vector<int>> ids;            // each row has size width
    std::vector<std::vector<std::uint8_t>> mask;  // 1 = real token, 0 = PAD

    std::size_t size() const { return ids.size(); }
};

inline TokenBatch make_token_batch(std::span<const std::string> texts, std::size_t max_length) {
    TokenBatch batch;
    batch.ids.reserve(texts.size());
    for (const auto& t : texts) {
        batch.ids.push_back(tokenize(t, max_length));
        batch.width = std::max(batch.width, batch.ids.back().size());
    }
    batch.mask.reserve(texts.size());
    for (auto& row : batch.ids) {
        std::vector<std::uint8_t> m(batch.width, 0);
        std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(row.size()), std::uint8_t(1));
        row.resize(batch.width, TokenizerConfig::pad_id);
        batch.mask.push_back(std::move(m));
    }
    return batch;
}

}  // namespace cxf
