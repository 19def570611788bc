#pragma once

// Checkpoint directory: manifest.json (format tag, config, vocabulary,
// ordered tensor names and shapes) and tensors.bin (row-major float32,
// little-endian, in manifest order).

#include <map>
#include <memory>
#include <string>

#include "mvsum/corpus.hpp"
#include "mvsum/model.hpp"

namespace mvsum::checkpoint {

inline constexpr const char* kFormat = "MV1";

struct Loaded {
  std::unique_ptr<model::MultiViewModel<float>> model;
  corpus::Vocab vocab;
  std::map<std::string, std::string> metadata;
};

// `metadata` carries pipeline settings (segmenter paths, C99 parameters).
void save(const std::string& dir, const model::MultiViewModel<float>& model, const corpus::Vocab& vocab,
          const std::map<std::string, std::string>& metadata = {});

Loaded load(const std::string& dir);

}  // namespace mvsum::checkpoint
