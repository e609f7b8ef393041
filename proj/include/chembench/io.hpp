#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "chembench/error.hpp"

namespace chembench {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline constexpr std::string_view kVersion = "0.1.0";

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open input file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open output file: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw RuntimeFailure("write failed: " + path);
}

// Calls fn(line_number, raw_line) for every non-blank line. Line numbers
// start at 1. A trailing '\r' is stripped.
inline void for_each_line(const std::string& path,
                          const std::function<void(std::size_t, std::string_view)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open input file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(lineno, line);
  }
}

inline json parse_json_line(std::string_view line, const std::string& path, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
  }
}

inline std::vector<json> read_jsonl(const std::string& path) {
  std::vector<json> rows;
  for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    rows.push_back(parse_json_line(line, path, lineno));
  });
  return rows;
}

template <typename Json>
void write_jsonl(const std::string& path, const std::vector<Json>& rows) {
  std::string buf;
  for (const auto& r : rows) {
    buf += r.dump();
    buf += '\n';
  }
  write_file(path, buf);
}

// Provenance stamped into every artifact the CLI writes.
struct RunConfig {
  std::string command;
  std::map<std::string, std::string> params;
  uint64_t seed = 0;
  std::string version{kVersion};

  ordered_json to_json() const {
    ordered_json j;
    j["command"] = command;
    ordered_json p = ordered_json::object();
    for (const auto& [k, v] : params) p[k] = v;
    j["params"] = p;
    j["seed"] = seed;
    j["version"] = version;
    return j;
  }
};

}  // namespace chembench
