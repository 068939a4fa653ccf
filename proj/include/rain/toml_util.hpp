#pragma once

#include <initializer_list>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <toml.hpp>

#include "rain/core.hpp"

namespace rain {

/// A parsed TOML file that remembers where each key came from, so that
/// errors found after parsing still point at a line.
class TomlDoc {
 public:
  static TomlDoc load(const std::string& path) {
    TomlDoc doc;
    doc.path_ = path;
    try {
      doc.root_ = toml::parse_file(path);
    } catch (const toml::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(e.source().begin.line) + ":" +
                        std::to_string(e.source().begin.column) + ": " + std::string(e.description()));
    }
    return doc;
  }

  static TomlDoc parse(std::string_view text, std::string name = "<string>") {
    TomlDoc doc;
    doc.path_ = std::move(name);
    try {
      doc.root_ = toml::parse(text, doc.path_);
    } catch (const toml::parse_error& e) {
      throw ConfigError(doc.path_ + ":" + std::to_string(e.source().begin.line) + ":" +
                        std::to_string(e.source().begin.column) + ": " + std::string(e.description()));
    }
    return doc;
  }

  const toml::table& root() const { return root_; }
  const std::string& path() const { return path_; }

  /// "file:line" for values from the file; the flag name for values that
  /// were set on the command line.
  std::string where(const toml::node& n) const {
    const auto& src = n.source().path;
    if (src && src->rfind("flag ", 0) == 0) return *src;
    return path_ + ":" + std::to_string(n.source().begin.line);
  }

  /// Location of a key read earlier ("section.key"), or the file name.
  std::string where(std::string_view dotted) const {
    auto it = where_.find(std::string(dotted));
    return it == where_.end() ? path_ : it->second;
  }

  /// Sets a dotted key from a command-line flag, creating tables on the way.
  /// `value` is TOML value syntax (strings quoted).
  void set(std::string_view dotted, std::string_view value, const std::string& flag) {
    toml::table parsed;
    const std::string label = "flag " + flag;
    try {
      parsed = toml::parse("v = " + std::string(value), label);
    } catch (const toml::parse_error& e) {
      throw ConfigError(label + ": invalid value '" + std::string(value) + "': " + std::string(e.description()));
    }
    toml::table* t = &root_;
    std::string_view rest = dotted;
    for (std::size_t dot; (dot = rest.find('.')) != std::string_view::npos; rest.remove_prefix(dot + 1)) {
      const std::string_view part = rest.substr(0, dot);
      toml::node* n = t->get(part);
      if (!n) n = &t->insert(part, toml::table{}).first->second;
      if (!n->is_table()) throw ConfigError(label + ": '" + std::string(part) + "' is not a table");
      t = n->as_table();
    }
    t->insert_or_assign(rest, std::move(*parsed.get("v")));
  }

  [[noreturn]] void fail(std::string_view dotted, const std::string& msg) const {
    throw ConfigError(where(dotted) + ": " + msg);
  }

  /// Rejects keys outside `allowed`, naming the line of the first stray key.
  void allow(const toml::table& t, std::string_view section, std::initializer_list<std::string_view> allowed) const {
    for (auto&& [k, v] : t) {
      bool ok = false;
      for (std::string_view a : allowed) ok = ok || k.str() == a;
      if (!ok) {
        const std::string name = section.empty() ? std::string(k.str()) : std::string(section) + "." + std::string(k.str());
        throw ConfigError(where(v) + ": unknown key '" + name + "'");
      }
    }
  }

  /// Sub-table `name` of `t`, or null when absent.
  const toml::table* table(const toml::table& t, std::string_view name, std::string_view dotted) const {
    const toml::node* n = t.get(name);
    if (!n) return nullptr;
    if (!n->is_table()) throw ConfigError(where(*n) + ": '" + std::string(dotted) + "' must be a table");
    return n->as_table();
  }

  template <class T>
  bool read(const toml::table& t, std::string_view key, std::string_view dotted, T& out) {
    const toml::node* n = t.get(key);
    if (!n) return false;
    where_[std::string(dotted)] = where(*n);
    if constexpr (std::is_same_v<T, bool>) {
      if (!n->is_boolean()) type_error(*n, dotted, "a boolean");
      out = n->as_boolean()->get();
    } else if constexpr (std::is_integral_v<T>) {
      if (!n->is_integer()) type_error(*n, dotted, "an integer");
      const std::int64_t v = n->as_integer()->get();
      if (v < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
          (v > 0 && static_cast<std::uint64_t>(v) > static_cast<std::uint64_t>(std::numeric_limits<T>::max())))
        throw ConfigError(where(*n) + ": '" + std::string(dotted) + "' out of range");
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (n->is_integer())
        out = static_cast<T>(n->as_integer()->get());
      else if (n->is_floating_point())
        out = static_cast<T>(n->as_floating_point()->get());
      else
        type_error(*n, dotted, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!n->is_string()) type_error(*n, dotted, "a string");
      out = n->as_string()->get();
    } else {
      static_assert(std::is_same_v<T, std::vector<double>>, "unsupported TOML value type");
      if (!n->is_array()) type_error(*n, dotted, "an array of numbers");
      out.clear();
      for (const toml::node& e : *n->as_array()) {
        if (e.is_integer())
          out.push_back(static_cast<double>(e.as_integer()->get()));
        else if (e.is_floating_point())
          out.push_back(e.as_floating_point()->get());
        else
          type_error(e, dotted, "an array of numbers");
      }
    }
    return true;
  }

 private:
  [[noreturn]] void type_error(const toml::node& n, std::string_view dotted, const char* want) const {
    throw ConfigError(where(n) + ": '" + std::string(dotted) + "' must be " + want);
  }

  std::string path_;
  toml::table root_;
  std::map<std::string, std::string> where_;
};

}  // namespace rain
