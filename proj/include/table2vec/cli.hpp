#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "table2vec/eval.hpp"
#include "table2vec/interpret.hpp"
#include "table2vec/model.hpp"
#include "table2vec/prep.hpp"

namespace t2v::cli {

// Exit codes: 0 success, 2 usage, then one per command.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kProfileFailed = 10,
  kSynthFailed = 11,
  kTrainFailed = 12,
  kEmbedFailed = 13,
  kPredictFailed = 14,
  kInterpretFailed = 15,
  kEvaluateFailed = 16,
};

struct RunConfig {
  std::uint64_t seed = 0;

  struct Paths {
    std::string table;
    std::string schema;
    std::string checkpoint;
    std::string out = ".";
    std::string kind_overrides;
  } paths;

  // Unset date/label columns are taken from the header when it has a
  // "date" / "label" column.
  struct Table {
    char delimiter = ',';
    std::string id_column = "customer_id";
    std::optional<std::string> date_column;
    std::optional<std::vector<std::string>> label_columns;
  } table;

  RecognizerConfig recognizer;
  bool dynamic_analysis = true;
  model::ModelConfig model;
  model::TrainConfig train;
  interpret::InterpretConfig interpret;
  bool interpret_text = true;
  eval::SynthConfig synth;
  eval::BaselineConfig baseline;

  std::string task;                   // empty: every task
  std::string evaluate_mode = "model";  // "model" or "uplift"

  // Copies the run seed into every stage config.
  void propagate_seed();
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);

// Entry point of the `table2vec` executable. Results go to files under the
// output directory and a one-line JSON summary to `out`; failures print
// {"error": {"code", "message", "command"}} to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace t2v::cli
