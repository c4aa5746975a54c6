#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "entlab/corpus.hpp"
#include "entlab/error.hpp"
#include "entlab/nanoformer.hpp"
#include "entlab/trainer.hpp"

namespace entlab {

std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see partial output.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

// Fixed 6-significant-digit formatting used by every CSV.
std::string fmt6(double x);

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

// Rejects keys outside `allowed`, naming `what` in the error.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* what);

// Reads j[key] into out when present; type mismatches become kFormat errors.
template <typename T>
void get_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad value for '") + key + "': " + e.what());
  }
}

nlohmann::json parse_json_file(const std::filesystem::path& path);

}  // namespace entlab
