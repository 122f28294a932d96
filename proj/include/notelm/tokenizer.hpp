#pragma once

#include <cstdint>
#include <fstream>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "notelm/common.hpp"

namespace notelm {

using TokenId = int32_t;

// Byte-level BPE state: ids 0-255 are raw bytes, merge k produces id 256+k,
// and the five reserved specials sit after the merges. Specials are appended
// programmatically (never produced by encoding raw text, never split).
class TokenizerState {
public:
    static constexpr int kNumSpecials = 5;

    TokenizerState() { rebuild(); }

    explicit TokenizerState(std::vector<std::pair<TokenId, TokenId>> merges)
        : merges_(std::move(merges)) {
        validate();
        rebuild();
    }

    const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }
    size_t vocab_size() const { return 256 + merges_.size() + kNumSpecials; }

    TokenId pad_id() const { return static_cast<TokenId>(256 + merges_.size()); }
    TokenId marker_id() const { return pad_id() + 1; }   // "TARPON" task identifier
    TokenId label0_id() const { return pad_id() + 2; }   // answer token "0" (non-trauma)
    TokenId label1_id() const { return pad_id() + 3; }   // answer token "1" (trauma)
    TokenId eot_id() const { return pad_id() + 4; }

    bool is_special(TokenId id) const { return id >= pad_id() && id < static_cast<TokenId>(vocab_size()); }

    int merge_rank(TokenId a, TokenId b) const {
        auto it = ranks_.find(pair_key(a, b));
        return it == ranks_.end() ? -1 : it->second;
    }

    std::vector<TokenId> encode(const std::string& text) const {
        std::vector<TokenId> seq;
        seq.reserve(text.size());
        for (unsigned char c : text) seq.push_back(static_cast<TokenId>(c));
        if (seq.size() < 2 || merges_.empty()) return seq;
        // repeatedly apply the lowest-ranked applicable merge; merged ids can
        // only be consumed by later merges, so this equals applying the merge
        // list in learned order
        for (;;) {
            int best = -1;
            for (size_t i = 0; i + 1 < seq.size(); ++i) {
                int r = merge_rank(seq[i], seq[i + 1]);
                if (r >= 0 && (best < 0 || r < best)) best = r;
            }
            if (best < 0) break;
            const auto [a, b] = merges_[static_cast<size_t>(best)];
            const TokenId merged = static_cast<TokenId>(256 + best);
            size_t w = 0;
            for (size_t i = 0; i < seq.size();) {
                if (i + 1 < seq.size() && seq[i] == a && seq[i + 1] == b) {
                    seq[w++] = merged;
                    i += 2;
                } else {
                    seq[w++] = seq[i++];
                }
            }
            seq.resize(w);
            if (seq.size() < 2) break;
        }
        return seq;
    }

    std::string decode(const std::vector<TokenId>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            TokenId id = ids[i];
            if (id < 0 || id >= static_cast<TokenId>(vocab_size()))
                throw Error("decode: id " + std::to_string(id) + " out of range at position " +
                            std::to_string(i));
            if (is_special(id)) {
                if (id == pad_id()) out += "⟨PAD⟩";
                else if (id == marker_id()) out += "⟨TARPON⟩";
                else if (id == label0_id()) out += "⟨0⟩";
                else if (id == label1_id()) out += "⟨1⟩";
                else out += "⟨EOT⟩";
            } else {
                out += token_bytes_[static_cast<size_t>(id)];
            }
        }
        return out;
    }

    uint64_t hash() const {
        uint64_t h = fnv1a64("bpe-v1");
        for (const auto& [a, b] : merges_) {
            uint32_t v[2] = {static_cast<uint32_t>(a), static_cast<uint32_t>(b)};
            h = fnv1a64_bytes(v, sizeof(v), h);
        }
        uint32_t vs = static_cast<uint32_t>(vocab_size());
        return fnv1a64_bytes(&vs, sizeof(vs), h);
    }

    nlohmann::json to_json() const {
        nlohmann::json jm = nlohmann::json::array();
        for (const auto& [a, b] : merges_) jm.push_back({a, b});
        return nlohmann::json{
            {"merges", jm},
            {"specials",
             {{"pad", pad_id()},
              {"marker", marker_id()},
              {"label0", label0_id()},
              {"label1", label1_id()},
              {"eot", eot_id()}}},
            {"version", 1}};
    }

    static TokenizerState from_json(const nlohmann::json& j) {
        if (!j.contains("version") || j.at("version").get<int>() != 1)
            throw ParseError("tokenizer file: unsupported version");
        std::vector<std::pair<TokenId, TokenId>> merges;
        for (const auto& m : j.at("merges")) {
            if (!m.is_array() || m.size() != 2)
                throw ParseError("tokenizer file: merge entries must be [id,id]");
            merges.emplace_back(m[0].get<TokenId>(), m[1].get<TokenId>());
        }
        TokenizerState state(std::move(merges));
        const auto& sp = j.at("specials");
        if (sp.at("pad").get<TokenId>() != state.pad_id() ||
            sp.at("marker").get<TokenId>() != state.marker_id() ||
            sp.at("label0").get<TokenId>() != state.label0_id() ||
            sp.at("label1").get<TokenId>() != state.label1_id() ||
            sp.at("eot").get<TokenId>() != state.eot_id())
            throw ParseError("tokenizer file: special ids inconsistent with merge count");
        return state;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("tokenizer save: cannot open " + path);
        out << to_json().dump(2) << '\n';
    }

    static TokenizerState load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("tokenizer load: cannot open " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("tokenizer load: ") + e.what());
        }
        return from_json(j);
    }

private:
    static uint64_t pair_key(TokenId a, TokenId b) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
               static_cast<uint32_t>(b);
    }

    void validate() const {
        for (size_t k = 0; k < merges_.size(); ++k) {
            const auto [a, b] = merges_[k];
            TokenId limit = static_cast<TokenId>(256 + k);
            if (a < 0 || b < 0 || a >= limit || b >= limit)
                throw ParseError("tokenizer: merge " + std::to_string(k) +
                                 " references id outside the prefix-closed range");
        }
    }

    void rebuild() {
        ranks_.clear();
        ranks_.reserve(merges_.size() * 2);
        token_bytes_.clear();
        token_bytes_.reserve(256 + merges_.size());
        for (int c = 0; c < 256; ++c) token_bytes_.push_back(std::string(1, static_cast<char>(c)));
        for (size_t k = 0; k < merges_.size(); ++k) {
            const auto [a, b] = merges_[k];
            ranks_[pair_key(a, b)] = static_cast<int>(k);
            token_bytes_.push_back(token_bytes_[static_cast<size_t>(a)] +
                                   token_bytes_[static_cast<size_t>(b)]);
        }
    }

    std::vector<std::pair<TokenId, TokenId>> merges_;
    std::unordered_map<uint64_t, int> ranks_;
    std::vector<std::string> token_bytes_;
};

// Greedy BPE trainer. Most frequent adjacent pair wins each round; ties break
// to the lexicographically smallest (a, b) so training is fully deterministic.
// Stops early when no pair repeats.
inline TokenizerState train_bpe(const std::vector<std::string>& corpus_texts,
                                size_t target_merges) {
    if (corpus_texts.empty()) throw Error("train_bpe: empty corpus");

    auto key_of = [](TokenId a, TokenId b) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
               static_cast<uint32_t>(b);
    };
    auto key_pair = [](uint64_t k) {
        return std::pair<TokenId, TokenId>(static_cast<TokenId>(k >> 32),
                                           static_cast<TokenId>(k & 0xffffffffu));
    };

    std::vector<std::vector<TokenId>> seqs;
    seqs.reserve(corpus_texts.size());
    for (const auto& t : corpus_texts) {
        std::vector<TokenId> s;
        s.reserve(t.size());
        for (unsigned char c : t) s.push_back(static_cast<TokenId>(c));
        seqs.push_back(std::move(s));
    }

    std::unordered_map<uint64_t, int64_t> counts;
    std::unordered_map<uint64_t, std::vector<uint32_t>> where;  // pair -> candidate seqs

    // heap entries are (count-at-push, pair); stale entries are dropped when
    // they no longer match the live count
    struct Entry {
        int64_t count;
        uint64_t key;
    };
    struct Cmp {
        bool operator()(const Entry& x, const Entry& y) const {
            if (x.count != y.count) return x.count < y.count;
            return x.key > y.key;  // smaller pair wins ties
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, Cmp> heap;

    auto bump = [&](uint64_t key, uint32_t seq_id) {
        int64_t c = ++counts[key];
        heap.push({c, key});
        auto& w = where[key];
        if (w.empty() || w.back() != seq_id) w.push_back(seq_id);
    };

    for (uint32_t si = 0; si < seqs.size(); ++si) {
        const auto& s = seqs[si];
        for (size_t i = 0; i + 1 < s.size(); ++i) bump(key_of(s[i], s[i + 1]), si);
    }

    std::vector<std::pair<TokenId, TokenId>> merges;
    merges.reserve(target_merges);

    while (merges.size() < target_merges) {
        uint64_t best_key = 0;
        int64_t best_count = 0;
        while (!heap.empty()) {
            Entry top = heap.top();
            auto it = counts.find(top.key);
            int64_t live = it == counts.end() ? 0 : it->second;
            if (live != top.count) {
                heap.pop();
                continue;
            }
            best_key = top.key;
            best_count = live;
            break;
        }
        if (best_count < 2) break;  // nothing repeats

        const auto [a, b] = key_pair(best_key);
        const TokenId merged = static_cast<TokenId>(256 + merges.size());
        merges.emplace_back(a, b);

        auto dec = [&](TokenId x, TokenId y) {
            auto it = counts.find(key_of(x, y));
            if (it != counts.end() && --it->second <= 0) counts.erase(it);
        };

        std::vector<uint32_t> cand;
        cand.swap(where[best_key]);
        where.erase(best_key);
        uint32_t prev = UINT32_MAX;
        for (uint32_t si : cand) {
            if (si == prev) continue;  // the index may repeat a sequence
            prev = si;
            auto& s = seqs[si];
            size_t w = 0;
            bool touched = false;
            for (size_t i = 0; i < s.size();) {
                if (i + 1 < s.size() && s[i] == a && s[i + 1] == b) {
                    TokenId left = w > 0 ? s[w - 1] : -1;
                    TokenId right = i + 2 < s.size() ? s[i + 2] : -1;
                    dec(a, b);
                    if (left >= 0) {
                        dec(left, a);
                        bump(key_of(left, merged), si);
                    }
                    if (right >= 0) {
                        dec(b, right);
                        bump(key_of(merged, right), si);
                    }
                    s[w++] = merged;
                    i += 2;
                    touched = true;
                } else {
                    s[w++] = s[i++];
                }
            }
            if (touched) s.resize(w);
        }
    }

    return TokenizerState(std::move(merges));
}

}  // namespace notelm
