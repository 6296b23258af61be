#pragma once

#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace textad {

struct Document {
    std::string id;
    std::string text;
    std::string label;
};

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// JSON-lines, one {"id","text","label"} object per line; blank lines skipped.
// Throws CorpusError naming the offending line on malformed input or
// duplicate ids.
std::vector<Document> read_corpus(const std::filesystem::path& path);
std::vector<Document> parse_corpus(const std::string& jsonl);
void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);

std::set<std::string> corpus_labels(const std::vector<Document>& docs);

} // namespace textad
