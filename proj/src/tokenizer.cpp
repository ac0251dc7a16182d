#include "kgrag/tokenizer.hpp"

#include <queue>

namespace kgrag::tokenizer {

BpeVocab BpeVocab::byte_level() {
    BpeVocab v;
    v.id_to_token_.reserve(256);
    for (int b = 0; b < 256; ++b) {
        std::string tok(1, static_cast<char>(b));
        v.token_to_id_.emplace(tok, static_cast<TokenId>(b));
        v.id_to_token_.push_back(std::move(tok));
    }
    return v;
}

TokenId BpeVocab::add_merge(TokenId left, TokenId right) {
    if (!contains(left) || !contains(right)) throw Error("merge references an unknown token");
    if (pair_rank_.count(key(left, right))) throw Error("duplicate merge");
    std::string joined = id_to_token_[left] + id_to_token_[right];
    if (token_to_id_.count(joined)) throw Error("merge output already exists as a token");
    auto id = static_cast<TokenId>(id_to_token_.size());
    auto rank = static_cast<std::int32_t>(merges_.size());
    merges_.push_back({left, right, id});
    pair_rank_.emplace(key(left, right), PairInfo{rank, id});
    token_to_id_.emplace(joined, id);
    id_to_token_.push_back(std::move(joined));
    return id;
}

const std::string& BpeVocab::token_bytes(TokenId id) const {
    if (!contains(id)) throw UnknownTokenError(id, 0);
    return id_to_token_[id];
}

std::int64_t BpeVocab::find(std::string_view bytes) const {
    auto it = token_to_id_.find(std::string(bytes));
    return it == token_to_id_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

BpeVocab::PairInfo BpeVocab::lookup_pair(TokenId left, TokenId right) const noexcept {
    auto it = pair_rank_.find(key(left, right));
    return it == pair_rank_.end() ? PairInfo{-1, 0} : it->second;
}

BpeVocab load_vocab(std::string_view document) {
    auto vocab = BpeVocab::byte_level();
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos <= document.size()) {
        auto eol = document.find('\n', pos);
        std::string_view line = document.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? document.size() + 1 : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!header_seen) {
            if (line != "bpe-vocab v1") throw FormatError("expected header 'bpe-vocab v1'", line_no);
            header_seen = true;
            continue;
        }
        if (trim(line).empty()) continue;
        auto sp = line.find(' ');
        if (sp == std::string_view::npos || line.find(' ', sp + 1) != std::string_view::npos) {
            throw FormatError("malformed merge line, expected '<left-hex> <right-hex>'", line_no);
        }
        auto left = hex_decode(line.substr(0, sp));
        auto right = hex_decode(line.substr(sp + 1));
        if (!left || !right || left->empty() || right->empty()) throw FormatError("malformed hex token", line_no);
        auto l = vocab.find(*left);
        if (l < 0) throw FormatError("merge references unknown token '" + hex_encode(*left) + "'", line_no);
        auto r = vocab.find(*right);
        if (r < 0) throw FormatError("merge references unknown token '" + hex_encode(*right) + "'", line_no);
        try {
            vocab.add_merge(static_cast<TokenId>(l), static_cast<TokenId>(r));
        } catch (const Error& e) {
            throw FormatError(e.what(), line_no);
        }
    }
    if (!header_seen) throw FormatError("empty vocab file", 1);
    return vocab;
}

std::string serialize_vocab(const BpeVocab& vocab) {
    std::string out = "bpe-vocab v1\n";
    for (const auto& m : vocab.merges()) {
        out += hex_encode(vocab.token_bytes(m.left));
        out += ' ';
        out += hex_encode(vocab.token_bytes(m.right));
        out += '\n';
    }
    return out;
}

TokenSequence encode(std::string_view text, const BpeVocab& vocab) {
    TokenSequence seq;
    seq.source_byte_len = text.size();
    const std::size_t n = text.size();
    if (n == 0) return seq;

    // Doubly linked list over byte positions; a min-heap of candidate pairs keyed
    // by (rank, left position) yields lowest-rank-first, leftmost-first merging.
    std::vector<TokenId> id(n);
    std::vector<std::int64_t> prev(n), next(n);
    for (std::size_t i = 0; i < n; ++i) {
        id[i] = static_cast<unsigned char>(text[i]);
        prev[i] = static_cast<std::int64_t>(i) - 1;
        next[i] = i + 1 < n ? static_cast<std::int64_t>(i + 1) : -1;
    }
    if (vocab.merges().empty()) {
        seq.ids = std::move(id);
        return seq;
    }

    struct Candidate {
        std::int32_t rank;
        std::int64_t left;
        std::int64_t right;
        TokenId left_id;
        TokenId right_id;
        bool operator>(const Candidate& o) const {
            return rank != o.rank ? rank > o.rank : left > o.left;
        }
    };
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;
    auto push = [&](std::int64_t l, std::int64_t r) {
        if (l < 0 || r < 0) return;
        auto info = vocab.lookup_pair(id[l], id[r]);
        if (info.rank >= 0) heap.push({info.rank, l, r, id[l], id[r]});
    };
    for (std::size_t i = 0; i + 1 < n; ++i) push(static_cast<std::int64_t>(i), static_cast<std::int64_t>(i + 1));

    std::vector<bool> alive(n, true);
    while (!heap.empty()) {
        auto c = heap.top();
        heap.pop();
        if (!alive[c.left] || !alive[c.right] || next[c.left] != c.right || id[c.left] != c.left_id ||
            id[c.right] != c.right_id) {
            continue;
        }
        id[c.left] = vocab.lookup_pair(c.left_id, c.right_id).result;
        alive[c.right] = false;
        next[c.left] = next[c.right];
        if (next[c.right] >= 0) prev[next[c.right]] = c.left;
        push(prev[c.left], c.left);
        push(c.left, next[c.left]);
    }

    for (std::int64_t i = 0; i >= 0; i = next[i]) seq.ids.push_back(id[i]);
    return seq;
}

std::string decode(const std::vector<TokenId>& ids, const BpeVocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!vocab.contains(ids[i])) throw UnknownTokenError(ids[i], i);
        out += vocab.token_bytes(ids[i]);
    }
    return out;
}

std::string decode(const TokenSequence& seq, const BpeVocab& vocab) {
    auto out = decode(seq.ids, vocab);
    if (out.size() != seq.source_byte_len) {
        throw Error("decoded " + std::to_string(out.size()) + " bytes, sequence declares " +
                    std::to_string(seq.source_byte_len));
    }
    return out;
}

std::size_t count_tokens(std::string_view text, const BpeVocab& vocab) {
    return encode(text, vocab).ids.size();
}

}  // namespace kgrag::tokenizer
