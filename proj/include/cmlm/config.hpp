#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmlm/encoder.hpp"
#include "cmlm/synth.hpp"
#include "cmlm/trainer.hpp"

namespace cmlm {

// Everything a command needs, with a default for every field. The file
// form is flat `key = value` lines; `#` starts a comment. Unknown keys and
// unparsable values are ConfigErrors.
struct RunConfig {
  EncoderConfig encoder;  // vocab_size is derived from the data
  std::size_t vocab_target = 512;
  TrainPlan plan;
  SynthConfig synth;
  std::filesystem::path corpus;
  std::filesystem::path bitext;
  std::filesystem::path nli;

  RunConfig();

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Applies every assignment in `text`; `origin` names the source in errors.
  void merge(const std::string& text, const std::string& origin = "config");
  void merge_file(const std::filesystem::path& path);
  // Every key in keys() order; parses back to an equal configuration.
  std::string serialize() const;
};

}  // namespace cmlm
