#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgrag/common.hpp"

namespace kgrag::tokenizer {

using TokenId = std::uint32_t;

class UnknownTokenError : public Error {
public:
    UnknownTokenError(TokenId id, std::size_t position)
        : Error("unknown token id " + std::to_string(id) + " at position " + std::to_string(position)),
          id_(id), position_(position) {}
    TokenId id() const noexcept { return id_; }
    std::size_t position() const noexcept { return position_; }

private:
    TokenId id_;
    std::size_t position_;
};

struct Merge {
    TokenId left;
    TokenId right;
    TokenId result;
};

/// Byte-level BPE vocabulary. Ids 0-255 are the single-byte tokens; merge i
/// produces id 256 + i, and its rank is i.
class BpeVocab {
public:
    /// The 256 byte tokens and no merges.
    static BpeVocab byte_level();

    /// Appends a merge of two existing tokens. Throws on unknown ids or when the
    /// pair (or its output sequence) is already present.
    TokenId add_merge(TokenId left, TokenId right);

    std::size_t size() const noexcept { return id_to_token_.size(); }
    const std::vector<Merge>& merges() const noexcept { return merges_; }
    const std::string& token_bytes(TokenId id) const;
    bool contains(TokenId id) const noexcept { return id < id_to_token_.size(); }
    /// Id of a byte sequence, or -1.
    std::int64_t find(std::string_view bytes) const;

    /// Rank and output id of merging (left, right); rank < 0 when no such merge.
    struct PairInfo {
        std::int32_t rank;
        TokenId result;
    };
    PairInfo lookup_pair(TokenId left, TokenId right) const noexcept;

private:
    BpeVocab() = default;
    static std::uint64_t key(TokenId l, TokenId r) noexcept { return (std::uint64_t(l) << 32) | r; }

    std::vector<Merge> merges_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::unordered_map<std::uint64_t, PairInfo> pair_rank_;
};

struct TokenSequence {
    std::vector<TokenId> ids;
    std::size_t source_byte_len = 0;

    bool operator==(const TokenSequence&) const = default;
};

/// Parses the `bpe-vocab v1` format: one `<left-hex> <right-hex>` merge per line.
BpeVocab load_vocab(std::string_view document);
std::string serialize_vocab(const BpeVocab& vocab);

TokenSequence encode(std::string_view text, const BpeVocab& vocab);
std::string decode(const TokenSequence& seq, const BpeVocab& vocab);
std::string decode(const std::vector<TokenId>& ids, const BpeVocab& vocab);
std::size_t count_tokens(std::string_view text, const BpeVocab& vocab);

}  // namespace kgrag::tokenizer
