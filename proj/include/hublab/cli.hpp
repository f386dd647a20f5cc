#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hublab {

// Resolved key=value settings of one run; every key must be declared by the
// subcommand's schema.
class ExperimentConfig {
 public:
  ExperimentConfig(std::string subcommand, std::map<std::string, std::string> defaults);

  // UsageError naming the key when it is not declared.
  void set(const std::string& key, const std::string& value);
  // Parses "key=value" lines; '#' starts a comment.
  void merge_file(const std::string& path);

  const std::string& subcommand() const { return subcommand_; }
  const std::map<std::string, std::string>& values() const { return values_; }

  // FormatError naming the key on a malformed value.
  std::string str(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;  // comma-separated

  void write_snapshot(const std::string& path) const;

 private:
  std::string subcommand_;
  std::map<std::string, std::string> values_;
};

// Declared keys and defaults of a subcommand; UsageError for an unknown one.
std::map<std::string, std::string> subcommand_defaults(const std::string& subcommand);
const std::vector<std::string>& subcommands();

// Entry point: `hublab <subcommand> [--config FILE] [--out DIR]
// [--deterministic] [key=value ...]`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hublab
