#include "textad/corpus.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace textad {

namespace {

std::string string_field(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw CorpusError("corpus line " + std::to_string(line) + ": missing string field \"" + key + "\"");
    }
    return it->get<std::string>();
}

} // namespace

std::vector<Document> parse_corpus(const std::string& jsonl) {
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    std::istringstream is(jsonl);
    std::size_t lineno = 0;
    for (std::string line; std::getline(is, line);) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw CorpusError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!obj.is_object()) throw CorpusError("corpus line " + std::to_string(lineno) + ": expected an object");
        Document d{string_field(obj, "id", lineno), string_field(obj, "text", lineno),
                   string_field(obj, "label", lineno)};
        if (!seen.insert(d.id).second) {
            throw CorpusError("corpus line " + std::to_string(lineno) + ": duplicate id \"" + d.id + "\"");
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<Document> read_corpus(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw CorpusError("cannot open corpus " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_corpus(ss.str());
}

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
    std::ofstream os(path);
    if (!os) throw CorpusError("cannot write corpus " + path.string());
    for (const auto& d : docs) {
        os << nlohmann::json{{"id", d.id}, {"text", d.text}, {"label", d.label}}.dump() << '\n';
    }
}

std::set<std::string> corpus_labels(const std::vector<Document>& docs) {
    std::set<std::string> labels;
    for (const auto& d : docs) labels.insert(d.label);
    return labels;
}

} // namespace textad
