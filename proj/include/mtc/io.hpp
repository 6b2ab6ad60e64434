#pragma once

// File plumbing: JSON record readers tolerant of the three layouts corpora
// ship in (single array, JSON lines, concatenated pretty-printed objects),
// JSONL writing, and MTREE_DATA_DIR path resolution.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtc/errors.hpp"

namespace mtc {

using Json = nlohmann::json;

inline std::string resolve_data_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) return path;
    if (const char* root = std::getenv("MTREE_DATA_DIR")) {
        fs::path candidate = fs::path(root) / path;
        if (fs::exists(candidate)) return candidate.string();
    }
    throw IoError(path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Split a stream of JSON objects on top-level braces (string-aware); works
// for JSONL and for pretty-printed object sequences alike.
inline std::vector<Json> parse_object_stream(const std::string& text) {
    std::vector<Json> out;
    int depth = 0;
    bool in_string = false, escaped = false;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            if (depth == 0) start = i;
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) out.push_back(Json::parse(text.substr(start, i - start + 1)));
        }
    }
    return out;
}

inline std::vector<Json> read_json_records(const std::string& path) {
    std::string text = read_file(resolve_data_path(path));
    std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    if (text[first] == '[') {
        Json arr = Json::parse(text);
        return std::vector<Json>(arr.begin(), arr.end());
    }
    return parse_object_stream(text);
}

inline void write_jsonl(const std::string& path, const std::vector<Json>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path);
    for (const auto& r : records) out << r.dump() << "\n";
}

inline void write_json(const std::string& path, const Json& value) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path);
    out << value.dump(2) << "\n";
}

}  // namespace mtc
