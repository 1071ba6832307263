#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace hrg::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int schema_version = 1;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr)) throw IoError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < n; ++i) out += hex[md[i] >> 4], out += hex[md[i] & 15];
  return out;
}

// Shortest text that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

// RFC 4180: fields with separators, quotes or line breaks are quoted, quotes doubled.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + '"';
}

using Cell = std::variant<std::string, double, long long>;

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : cols_(header.size()) { line(header); }

  Csv& row(const std::vector<Cell>& cells) {
    if (cells.size() != cols_) throw IoError("CSV row width does not match the header");
    std::vector<std::string> s;
    for (auto& c : cells) {
      if (auto* d = std::get_if<double>(&c))
        s.push_back(format_double(*d));
      else if (auto* i = std::get_if<long long>(&c))
        s.push_back(std::to_string(*i));
      else
        s.push_back(std::get<std::string>(c));
    }
    line(s);
    return *this;
  }
  const std::string& str() const { return text_; }
  size_t rows() const { return rows_; }

 private:
  void line(const std::vector<std::string>& s) {
    for (size_t i = 0; i < s.size(); ++i) text_ += (i ? "," : "") + csv_field(s[i]);
    text_ += "\r\n";
    ++rows_;
  }
  size_t cols_;
  size_t rows_ = 0;
  std::string text_;
};

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> row;
  std::string f;
  bool q = false, any = false;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (q) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') f += '"', ++i;
      else if (c == '"') q = false;
      else f += c;
    } else if (c == '"') {
      q = any = true;
    } else if (c == ',') {
      row.push_back(f), f.clear();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(f), f.clear();
      out.push_back(row), row.clear();
      any = false;
    } else {
      f += c, any = true;
    }
  }
  if (any || !f.empty() || !row.empty()) row.push_back(f), out.push_back(row);
  return out;
}

// Output directory that records every file it writes, with content hashes, for the manifest.
class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw IoError("cannot create output directory " + dir_.string());
  }
  const fs::path& path() const { return dir_; }

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream f(dir_ / name, std::ios::binary);
    f << bytes;
    if (!f) throw IoError("cannot write " + (dir_ / name).string());
    files_.push_back({{"name", name}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  void write_csv(const std::string& name, const Csv& c) { write(name, c.str()); }
  void write_json(const std::string& name, json j) {
    if (!j.contains("schema_version")) j["schema_version"] = schema_version;
    write(name, j.dump(2) + "\n");
  }
  const json& files() const { return files_; }

 private:
  fs::path dir_;
  json files_ = json::array();
};

inline std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace hrg::io
