#include "textad/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

namespace textad {

namespace {

// NLTK English list.
constexpr const char* kEnglishStopwords[] = {
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've", "you'll",
    "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself", "she", "she's",
    "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them", "their", "theirs",
    "themselves", "what", "which", "who", "whom", "this", "that", "that'll", "these", "those", "am",
    "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having", "do", "does",
    "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because", "as", "until", "while", "of",
    "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over", "under",
    "again", "further", "then", "once", "here", "there", "when", "where", "why", "how", "all", "any",
    "both", "each", "few", "more", "most", "other", "some", "such", "no", "nor", "not", "only", "own",
    "same", "so", "than", "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should",
    "should've", "now", "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn",
    "couldn't", "didn", "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven",
    "haven't", "isn", "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't",
    "shan", "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
    "wouldn", "wouldn't",
};

bool is_punct_or_symbol(UChar32 c) {
    switch (u_charType(c)) {
        case U_CONNECTOR_PUNCTUATION:
        case U_DASH_PUNCTUATION:
        case U_START_PUNCTUATION:
        case U_END_PUNCTUATION:
        case U_INITIAL_PUNCTUATION:
        case U_FINAL_PUNCTUATION:
        case U_OTHER_PUNCTUATION:
        case U_MATH_SYMBOL:
        case U_CURRENCY_SYMBOL:
        case U_MODIFIER_SYMBOL:
        case U_OTHER_SYMBOL:
            return true;
        default:
            return false;
    }
}

void append_utf8(std::string& out, UChar32 c) {
    char buf[U8_MAX_LENGTH];
    int32_t len = 0;
    U8_APPEND_UNSAFE(buf, len, c);
    out.append(buf, static_cast<std::size_t>(len));
}

std::vector<std::vector<UChar32>> split_whitespace(std::string_view text) {
    std::vector<std::vector<UChar32>> words;
    std::vector<UChar32> cur;
    const auto* s = reinterpret_cast<const uint8_t*>(text.data());
    const auto n = static_cast<int32_t>(text.size());
    int32_t i = 0;
    while (i < n) {
        UChar32 c;
        U8_NEXT(s, i, n, c);
        if (c < 0) continue;  // malformed byte sequence
        if (u_isUWhiteSpace(c)) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::string normalize_word(const std::vector<UChar32>& word, bool lowercase, bool strip) {
    std::string out;
    for (UChar32 c : word) {
        UChar32 f = lowercase ? u_foldCase(c, U_FOLD_CASE_DEFAULT) : c;
        if (strip && is_punct_or_symbol(f)) continue;
        append_utf8(out, f);
    }
    return out;
}

} // namespace

std::unordered_set<std::string> PreprocessConfig::default_stopwords() {
    std::vector<std::string> words(std::begin(kEnglishStopwords), std::end(kEnglishStopwords));
    return normalize_stopwords(words);
}

std::unordered_set<std::string> normalize_stopwords(std::span<const std::string> words, bool lowercase,
                                                    bool strip_punctuation) {
    std::unordered_set<std::string> out;
    for (const auto& w : words) {
        for (const auto& part : split_whitespace(w)) {
            auto norm = normalize_word(part, lowercase, strip_punctuation);
            if (!norm.empty()) out.insert(std::move(norm));
        }
    }
    return out;
}

Tokens preprocess(std::string_view text, const PreprocessConfig& cfg) {
    Tokens out;
    for (const auto& word : split_whitespace(text)) {
        auto tok = normalize_word(word, cfg.lowercase, cfg.strip_punctuation);
        if (tok.empty() || cfg.stopwords.count(tok)) continue;
        out.push_back(std::move(tok));
    }
    return out;
}

std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open stopword list " + path.string());
    std::vector<std::string> words;
    for (std::string line; std::getline(is, line);) words.push_back(line);
    return normalize_stopwords(words);
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
    id_to_token_ = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[BOS]"};
    for (std::size_t i = 0; i < kNumSpecial; ++i) token_to_id_[id_to_token_[i]] = i;
}

Vocabulary Vocabulary::build(std::span<const Tokens> corpus, std::size_t min_count) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : corpus) {
        for (const auto& t : doc) ++counts[t];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, c] : counts) {
        if (c >= min_count) ranked.emplace_back(tok, c);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens;
    tokens.reserve(ranked.size());
    for (auto& [tok, c] : ranked) tokens.push_back(tok);
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    for (auto& t : tokens) {
        if (t.empty()) throw std::invalid_argument("vocabulary token must be non-empty");
        if (v.token_to_id_.count(t)) throw std::invalid_argument("duplicate vocabulary token: " + t);
        v.token_to_id_[t] = v.id_to_token_.size();
        v.id_to_token_.push_back(std::move(t));
    }
    return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write vocabulary " + path.string());
    for (const auto& t : regular_tokens()) os << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open vocabulary " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(is, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Sequences

TokenSequence encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len,
                     EncodeOptions opts) {
    if (max_len == 0) throw std::invalid_argument("encode: max_len must be >= 1");
    TokenSequence seq;
    seq.ids.reserve(max_len);
    if (opts.prepend_bos) seq.ids.push_back(kBos);
    for (const auto& t : tokens) {
        if (seq.ids.size() == max_len) break;
        seq.ids.push_back(vocab.id(t));
    }
    seq.length = seq.ids.size();
    seq.ids.resize(max_len, kPad);
    return seq;
}

Tokens decode(const TokenSequence& seq, const Vocabulary& vocab) {
    Tokens out;
    for (std::size_t i = 0; i < seq.length; ++i) {
        const auto id = seq.ids[i];
        if (id == kBos || id == kCls) continue;
        out.push_back(vocab.token(id));
    }
    return out;
}

} // namespace textad
