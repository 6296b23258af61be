#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace textad {

using Tokens = std::vector<std::string>;

struct PreprocessConfig {
    bool lowercase = true;
    bool strip_punctuation = true;
    std::unordered_set<std::string> stopwords = default_stopwords();

    static std::unordered_set<std::string> default_stopwords();
};

// Whitespace split, case fold, delete Unicode P* and S* code points, then
// drop stopwords. Tokens left empty by stripping are dropped.
Tokens preprocess(std::string_view text, const PreprocessConfig& cfg = {});

// Stopword file: one token per line; blank lines and surrounding whitespace
// ignored. Entries are normalized with the same fold/strip as documents.
std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path);
std::unordered_set<std::string> normalize_stopwords(std::span<const std::string> words, bool lowercase = true,
                                                    bool strip_punctuation = true);

enum SpecialId : std::size_t { kPad = 0, kUnk = 1, kMask = 2, kCls = 3, kBos = 4 };
inline constexpr std::size_t kNumSpecial = 5;

class Vocabulary {
public:
    Vocabulary();

    // Tokens sorted by (frequency descending, token ascending); tokens below
    // min_count are omitted. Throws on an empty corpus.
    static Vocabulary build(std::span<const Tokens> corpus, std::size_t min_count = 2);
    // Regular tokens in id order (ids start after the special block).
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return id_to_token_.size(); }
    std::size_t id(const std::string& token) const;  // kUnk when absent
    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
    const std::string& token(std::size_t id) const { return id_to_token_.at(id); }
    std::span<const std::string> regular_tokens() const {
        return std::span(id_to_token_).subspan(kNumSpecial);
    }
    bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

    // One regular token per line; line i holds id kNumSpecial + i.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::size_t> token_to_id_;
};

struct TokenSequence {
    std::vector<std::size_t> ids;  // padded to max_len
    std::size_t length = 0;        // non-PAD positions

    std::size_t max_len() const { return ids.size(); }
    bool operator==(const TokenSequence&) const = default;
};

struct EncodeOptions {
    bool prepend_bos = false;  // causal LM inputs
};

// Unknown tokens map to UNK, truncation to max_len (BOS included), PAD fill.
TokenSequence encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len,
                     EncodeOptions opts = {});
// Tokens at non-PAD positions, BOS/CLS omitted.
Tokens decode(const TokenSequence& seq, const Vocabulary& vocab);

std::string join_tokens(std::span<const std::string> tokens);

} // namespace textad
