#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <mutex>

#include "detectleak/error.hpp"
#include "detectleak/hash.hpp"
#include "detectleak/jsonl.hpp"
#include "detectleak/log.hpp"

namespace detectleak {

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

// ---- jsonl -----------------------------------------------------------------

json make_header(const std::string& format, int version, const json& config, const json& extra) {
    json header = {{"format", format}, {"version", version}, {"config", config}};
    if (extra.is_object()) {
        for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
    }
    return json{{"header", header}};
}

std::optional<json> parse_header(const std::string& line) {
    if (line.find("\"header\"") == std::string::npos) return std::nullopt;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("header") || j.size() != 1) {
        return std::nullopt;
    }
    return j["header"];
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
}

void JsonlWriter::write(const json& record) {
    write_raw(record.dump(-1, ' ', false, json::error_handler_t::replace));
}

void JsonlWriter::write_raw(const std::string& line) {
    out_ << line << '\n';
    if (!out_) throw DataError("write failed: " + path_.string());
}

void JsonlWriter::close() {
    if (out_.is_open()) {
        out_.close();
        if (out_.fail()) throw DataError("close failed: " + path_.string());
    }
}

void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const std::string&)>& on_line) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        on_line(line_no, line);
    }
    if (in.bad()) throw DataError("read error in " + path.string());
}

json read_artifact(const std::filesystem::path& path, const std::string& expected_format,
                   const std::function<void(const json&)>& on_record) {
    std::optional<json> header;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        if (line_no == 1) {
            header = parse_header(line);
            if (!header) throw DataError(path.string() + ": missing artifact header");
            if (header->value("format", "") != expected_format) {
                throw DataError(path.string() + ": expected format " + expected_format + ", got " +
                                header->value("format", "?"));
            }
            return;
        }
        if (line.empty()) return;
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
        }
        on_record(record);
    });
    if (!header) throw DataError(path.string() + ": empty artifact");
    return *header;
}

json read_artifact_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    auto header = parse_header(line);
    if (!header) throw DataError(path.string() + ": missing artifact header");
    return *header;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError(path.string() + ": invalid JSON");
    return j;
}

void write_json_file(const std::filesystem::path& path, const json& value) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename keeps readers from ever seeing a torn file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out << value.dump(2) << '\n';
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---- log -------------------------------------------------------------------

namespace {
LogLevel g_level = LogLevel::info;
std::mutex g_log_mutex;

const char* level_name(LogLevel level) {
    switch (level) {
        case LogLevel::debug: return "debug";
        case LogLevel::info: return "info";
        case LogLevel::warn: return "warn";
        case LogLevel::error: return "error";
        case LogLevel::off: return "off";
    }
    return "?";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

std::string utc_timestamp() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()) % 1000;
    const std::time_t t = system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms.count()));
    return out;
}

void log_event(LogLevel level, std::string_view event, const json& fields) {
    if (level < g_level || g_level == LogLevel::off) return;
    json line = {{"ts", utc_timestamp()}, {"level", level_name(level)}, {"event", event}};
    if (fields.is_object()) {
        for (auto it = fields.begin(); it != fields.end(); ++it) line[it.key()] = it.value();
    }
    const std::string text = line.dump(-1, ' ', false, json::error_handler_t::replace);
    std::lock_guard lock(g_log_mutex);
    std::cerr << text << '\n';
}

}  // namespace detectleak
