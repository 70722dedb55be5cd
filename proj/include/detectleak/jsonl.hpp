#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace detectleak {

using json = nlohmann::json;

/// Every line-delimited artifact starts with one header record of this shape:
/// `{"header": {"format": ..., "version": ..., "config": {...}, ...}}`.
json make_header(const std::string& format, int version, const json& config,
                 const json& extra = json::object());

/// Returns the header payload if `line` is a header record.
std::optional<json> parse_header(const std::string& line);

class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path);

    void write(const json& record);
    void write_raw(const std::string& line);
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

/// Reads an artifact written by JsonlWriter: validates the header's format
/// tag, then calls `on_record` for each remaining record. Returns the header.
json read_artifact(const std::filesystem::path& path, const std::string& expected_format,
                   const std::function<void(const json&)>& on_record);

/// Reads only the header of an artifact.
json read_artifact_header(const std::filesystem::path& path);

/// Calls `on_line` with (1-based line number, raw line) for every line.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const std::string&)>& on_line);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

}  // namespace detectleak
