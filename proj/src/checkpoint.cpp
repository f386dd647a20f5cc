#include "hublab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hublab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::string float_text(float x) {
  std::ostringstream os;
  os.precision(9);
  os << x;
  return os.str();
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint header: missing field '" + key + "'");
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint header: field '" + key + "' is not an integer: '" + it->second + "'");
  }
}

}  // namespace

void save_checkpoint(const Parameters& params, const ModelConfig& config, const std::string& path,
                     const std::map<std::string, std::string>& meta) {
  config.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write checkpoint " + path);
  os << "format=hublab-checkpoint-1\n";
  os << "n_layers=" << config.n_layers << '\n';
  os << "d_model=" << config.d_model << '\n';
  os << "n_heads=" << config.n_heads << '\n';
  os << "vocab_size=" << config.vocab_size << '\n';
  os << "max_seq_len=" << config.max_seq_len << '\n';
  os << "ff_mult=" << config.ff_mult << '\n';
  os << "rms_eps=" << float_text(config.rms_eps) << '\n';
  os << "tied_embeddings=" << (config.tied_embeddings ? 1 : 0) << '\n';
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw UsageError("checkpoint meta entry '" + k + "' contains a reserved character");
    }
    os << "meta." << k << '=' << v << '\n';
  }
  os << '\n';
  for (const auto& [name, t] : params.named()) {
    os << name;
    for (auto d : t.shape()) os << ' ' << d;
    os << '\n';
    const auto data = t.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!os) throw UsageError("write failed for checkpoint " + path);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  save_checkpoint(ckpt.params, ckpt.config, path, ckpt.meta);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot read checkpoint " + path);
  std::map<std::string, std::string> kv;
  Checkpoint ck;
  std::string line;
  bool blank = false;
  while (std::getline(is, line)) {
    if (line.empty()) {
      blank = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint header: malformed line '" + line + "'");
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key.rfind("meta.", 0) == 0) {
      ck.meta[key.substr(5)] = value;
    } else {
      kv[key] = value;
    }
  }
  if (!blank) throw FormatError("checkpoint header: missing blank line terminator");
  if (kv["format"] != "hublab-checkpoint-1") throw FormatError("checkpoint header: field 'format' unrecognized");
  ModelConfig& c = ck.config;
  c.n_layers = parse_int(kv, "n_layers");
  c.d_model = parse_int(kv, "d_model");
  c.n_heads = parse_int(kv, "n_heads");
  c.vocab_size = parse_int(kv, "vocab_size");
  c.max_seq_len = parse_int(kv, "max_seq_len");
  c.ff_mult = parse_int(kv, "ff_mult");
  c.tied_embeddings = parse_int(kv, "tied_embeddings") != 0;
  try {
    c.rms_eps = std::stof(kv.at("rms_eps"));
  } catch (const std::exception&) {
    throw FormatError("checkpoint header: field 'rms_eps' missing or malformed");
  }
  try {
    c.validate();
  } catch (const UsageError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  // Template with the expected names and shapes; payloads are filled in place.
  ck.params = init_parameters(c, 0);
  for (auto& [name, t] : ck.params.named()) {
    if (!std::getline(is, line)) throw FormatError("checkpoint: array '" + name + "' missing (file truncated)");
    std::istringstream ls(line);
    std::string got;
    ls >> got;
    if (got != name) throw FormatError("checkpoint: expected array '" + name + "', found '" + got + "'");
    Shape shape;
    std::size_t d = 0;
    while (ls >> d) shape.push_back(d);
    if (shape != t.shape()) {
      throw FormatError("checkpoint: array '" + name + "' has shape " + shape_str(shape) + ", config implies " +
                        shape_str(t.shape()));
    }
    auto out = t.mutable_data();
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(out.size() * sizeof(float))) {
      throw FormatError("checkpoint: array '" + name + "' truncated");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after last array");
  return ck;
}

}  // namespace hublab
