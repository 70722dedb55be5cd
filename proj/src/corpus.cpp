#include "detectleak/corpus.hpp"

#include <fstream>
#include <unordered_set>

#include "detectleak/error.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"

namespace detectleak {

std::string_view to_string(Origin origin) {
    return origin == Origin::corpus ? "corpus" : "benchmark";
}

Origin parse_origin(std::string_view text) {
    if (text == "corpus") return Origin::corpus;
    if (text == "benchmark") return Origin::benchmark;
    throw UsageError("unknown origin '" + std::string(text) + "'");
}

std::string doc_key(const DocRef& ref) {
    std::string key;
    key.reserve(ref.dataset.size() + 1 + ref.doc_id.size());
    key += ref.dataset;
    key += '\x1f';
    key += ref.doc_id;
    return key;
}

DocRef parse_doc_key(std::string_view key) {
    const auto sep = key.find('\x1f');
    if (sep == std::string_view::npos) return DocRef{"", std::string(key)};
    return DocRef{std::string(key.substr(0, sep)), std::string(key.substr(sep + 1))};
}

json to_json(const NormalizationPolicy& policy) {
    return {{"lowercase", policy.lowercase},
            {"collapse_whitespace", policy.collapse_whitespace},
            {"strip_line_comments", policy.strip_line_comments},
            {"strip_block_comments", policy.strip_block_comments}};
}

NormalizationPolicy policy_from_json(const json& j) {
    NormalizationPolicy p;
    p.lowercase = j.value("lowercase", p.lowercase);
    p.collapse_whitespace = j.value("collapse_whitespace", p.collapse_whitespace);
    p.strip_line_comments = j.value("strip_line_comments", p.strip_line_comments);
    p.strip_block_comments = j.value("strip_block_comments", p.strip_block_comments);
    return p;
}

namespace {

bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string strip_comments(std::string_view text, bool line, bool block) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const char c = text[i];
        const char next = i + 1 < n ? text[i + 1] : '\0';
        if (block && c == '/' && next == '*') {
            const auto close = text.find("*/", i + 2);
            i = close == std::string_view::npos ? n : close + 2;
            out += ' ';
            continue;
        }
        if (line && ((c == '/' && next == '/') || c == '#')) {
            const auto nl = text.find('\n', i);
            i = nl == std::string_view::npos ? n : nl;
            continue;
        }
        out += c;
        ++i;
    }
    return out;
}

std::string collapse(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (is_ascii_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += c;
    }
    return out;
}

}  // namespace

std::string normalize(std::string_view text, const NormalizationPolicy& policy) {
    std::string out = (policy.strip_line_comments || policy.strip_block_comments)
                          ? strip_comments(text, policy.strip_line_comments,
                                           policy.strip_block_comments)
                          : std::string(text);
    if (policy.lowercase) {
        for (char& c : out) {
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        }
    }
    if (policy.collapse_whitespace) out = collapse(out);
    return out;
}

json to_json(const IngestStats& stats) {
    return {{"accepted", stats.accepted},
            {"rejected_empty", stats.rejected_empty},
            {"rejected_malformed", stats.rejected_malformed}};
}

IngestStats stats_from_json(const json& j) {
    IngestStats s;
    s.accepted = j.value("accepted", std::size_t{0});
    s.rejected_empty = j.value("rejected_empty", std::size_t{0});
    s.rejected_malformed = j.value("rejected_malformed", std::size_t{0});
    return s;
}

namespace {

// Looks the text field up at top level first, then under "meta".
const json* find_text_field(const json& record, const std::string& field) {
    if (auto it = record.find(field); it != record.end()) return &*it;
    if (auto meta = record.find("meta"); meta != record.end() && meta->is_object()) {
        if (auto it = meta->find(field); it != meta->end()) return &*it;
    }
    return nullptr;
}

}  // namespace

IngestStats ingest(const std::filesystem::path& path, const IngestOptions& options,
                   const std::function<void(Document&&)>& on_document) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DataError("cannot read " + path.string());
    probe.close();

    IngestStats stats;
    std::unordered_set<std::string> seen;
    auto reject = [&](std::size_t line_no, const std::string& reason) {
        ++stats.rejected_malformed;
        if (options.on_malformed) {
            options.on_malformed(line_no, reason);
        } else {
            log_warn("ingest.malformed_line", {{"dataset", options.dataset},
                                               {"path", path.string()},
                                               {"line", line_no},
                                               {"reason", reason}});
        }
    };

    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object()) {
            reject(line_no, "not a JSON object");
            return;
        }
        auto id = record.find("id");
        if (id == record.end() || !id->is_string() || id->get_ref<const std::string&>().empty()) {
            reject(line_no, "missing or empty string field 'id'");
            return;
        }
        const json* text = find_text_field(record, options.text_field);
        if (text == nullptr || !text->is_string()) {
            reject(line_no, "missing string field '" + options.text_field + "'");
            return;
        }
        std::optional<std::string> repo;
        if (auto r = record.find("repo"); r != record.end() && !r->is_null()) {
            if (!r->is_string()) {
                reject(line_no, "field 'repo' must be a string or null");
                return;
            }
            repo = r->get<std::string>();
        }
        std::string doc_id = id->get<std::string>();
        if (!seen.insert(doc_id).second) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" +
                            doc_id + "' in dataset " + options.dataset);
        }
        std::string normalized = normalize(text->get_ref<const std::string&>(), options.policy);
        if (normalized.empty()) {
            ++stats.rejected_empty;
            return;
        }
        ++stats.accepted;
        on_document(Document{std::move(doc_id), options.origin, options.dataset, std::move(repo),
                             std::move(normalized)});
    });
    return stats;
}

std::vector<Document> ingest_all(const std::filesystem::path& path, const IngestOptions& options,
                                 IngestStats* stats) {
    std::vector<Document> docs;
    IngestStats s = ingest(path, options, [&](Document&& d) { docs.push_back(std::move(d)); });
    if (stats) *stats = s;
    return docs;
}

json to_json(const Document& doc) {
    return {{"id", doc.doc_id},
            {"text", doc.text},
            {"repo", doc.repo_path ? json(*doc.repo_path) : json(nullptr)}};
}

Document document_from_json(const json& j, Origin origin, const std::string& dataset) {
    Document d;
    d.doc_id = j.at("id").get<std::string>();
    d.origin = origin;
    d.dataset = dataset;
    d.text = j.at("text").get<std::string>();
    if (auto r = j.find("repo"); r != j.end() && r->is_string()) d.repo_path = r->get<std::string>();
    return d;
}

bool is_valid_dataset_name(std::string_view name) {
    if (name.empty() || name == "." || name == "..") return false;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '-' || c == '_' || c == '.';
        if (!ok) return false;
    }
    return true;
}

json to_json(const DatasetEntry& entry) {
    json j = {{"dataset", entry.dataset},
              {"origin", to_string(entry.origin)},
              {"path", entry.path.string()},
              {"text_field", entry.text_field}};
    if (entry.published_ratio) j["published_ratio"] = *entry.published_ratio;
    return j;
}

DatasetEntry dataset_entry_from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw UsageError("manifest entry must be an object");
    DatasetEntry e;
    try {
        e.dataset = j.at("dataset").get<std::string>();
        e.origin = parse_origin(j.at("origin").get<std::string>());
        e.path = j.at("path").get<std::string>();
    } catch (const json::exception& ex) {
        throw UsageError(std::string("manifest entry: ") + ex.what());
    }
    e.text_field = j.value("text_field", std::string("text"));
    if (auto r = j.find("published_ratio"); r != j.end() && r->is_string()) {
        e.published_ratio = r->get<std::string>();
    }
    if (!is_valid_dataset_name(e.dataset)) {
        throw UsageError("invalid dataset name '" + e.dataset +
                         "' (allowed: letters, digits, '-', '_', '.')");
    }
    if (e.path.is_relative() && !base_dir.empty()) e.path = base_dir / e.path;
    return e;
}

std::vector<DatasetEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read manifest " + path.string());
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto base = path.parent_path();
    std::vector<DatasetEntry> entries;

    json whole = json::parse(content, nullptr, false);
    if (!whole.is_discarded()) {
        if (whole.is_array()) {
            for (const auto& e : whole) entries.push_back(dataset_entry_from_json(e, base));
        } else if (whole.is_object() && whole.contains("datasets")) {
            for (const auto& e : whole["datasets"]) entries.push_back(dataset_entry_from_json(e, base));
        } else {
            entries.push_back(dataset_entry_from_json(whole, base));
        }
        return entries;
    }
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        auto nl = content.find('\n', pos);
        if (nl == std::string::npos) nl = content.size();
        std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
        }
        entries.push_back(dataset_entry_from_json(j, base));
    }
    return entries;
}

}  // namespace detectleak
