#pragma once
// Strict reader for JSON config objects: type-checked fields with defaults,
// errors that name the offending field, unknown keys rejected.

#include <array>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptz/error.hpp"

namespace ptz::detail {

class Fields {
 public:
  Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    convert(j_.at(key), field(key), out);
  }

  const nlohmann::json* child(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void ignore(const std::string& key) { used_.insert(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) fail(field(key), "unknown field");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& what) {
    throw Error(ErrorCode::Config, (field.empty() ? std::string("config") : field) + ": " + what);
  }

  static void convert(const nlohmann::json& v, const std::string& name, double& out) {
    if (!v.is_number()) fail(name, "expected a number");
    out = v.get<double>();
  }
  static void convert(const nlohmann::json& v, const std::string& name, int& out) {
    if (!v.is_number_integer()) fail(name, "expected an integer");
    out = v.get<int>();
  }
  static void convert(const nlohmann::json& v, const std::string& name, std::uint64_t& out) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(name, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void convert(const nlohmann::json& v, const std::string& name, bool& out) {
    if (!v.is_boolean()) fail(name, "expected true or false");
    out = v.get<bool>();
  }
  static void convert(const nlohmann::json& v, const std::string& name, std::string& out) {
    if (!v.is_string()) fail(name, "expected a string");
    out = v.get<std::string>();
  }
  template <std::size_t N>
  static void convert(const nlohmann::json& v, const std::string& name, std::array<double, N>& out) {
    if (!v.is_array() || v.size() != N) fail(name, "expected an array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) convert(v[i], name + "[" + std::to_string(i) + "]", out[i]);
  }
  static void convert(const nlohmann::json& v, const std::string& name, std::vector<double>& out) {
    if (!v.is_array()) fail(name, "expected an array of numbers");
    out.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) convert(v[i], name + "[" + std::to_string(i) + "]", out[i]);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace ptz::detail
