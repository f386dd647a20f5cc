#pragma once

#include <map>
#include <string>

#include "hublab/model.hpp"

namespace hublab {

// A trained model plus free-form provenance (lexicon seed, mixture, steps).
struct Checkpoint {
  ModelConfig config;
  Parameters params;
  std::map<std::string, std::string> meta;
};

// Header: "key=value" lines (model fields, then "meta.<key>" lines), a blank
// line, then per array a "name d0 d1 ..." line and its raw little-endian
// float32 payload.
void save_checkpoint(const Parameters& params, const ModelConfig& config, const std::string& path,
                     const std::map<std::string, std::string>& meta = {});
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// FormatError naming the offending field or array on a corrupt file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hublab
