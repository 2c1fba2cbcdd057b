#include "table2vec/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "table2vec/error.hpp"

namespace t2v::cli {

namespace {

namespace fs = std::filesystem;
using numeric::Index;
using numeric::Matrix;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, "'" + path + "' is not JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

std::string number(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

fs::path out_dir(const RunConfig& c) {
  fs::path dir(c.paths.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create output directory '" + dir.string() + "'");
  return dir;
}

const std::string& require(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorCode::kIo, std::string("no ") + what + " path given");
  return path;
}

std::vector<std::string> header_fields(const std::string& path, char delimiter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    else if (ch == delimiter && !quoted) fields.push_back(std::exchange(field, {}));
    else field += ch;
  }
  fields.push_back(field);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

TableFormat table_format(const RunConfig& c, const std::string& path) {
  TableFormat f;
  f.delimiter = c.table.delimiter;
  f.id_column = c.table.id_column;
  const auto header = header_fields(path, f.delimiter);
  auto has = [&](const std::string& name) { return std::find(header.begin(), header.end(), name) != header.end(); };
  f.date_column = c.table.date_column;
  if (!f.date_column && has("date")) f.date_column = "date";
  if (c.table.label_columns) f.label_columns = *c.table.label_columns;
  else if (has("label")) f.label_columns = {"label"};
  return f;
}

BigTable load(const RunConfig& c) {
  const std::string& path = require(c.paths.table, "table");
  return load_table(path, table_format(c, path));
}

FeatureSchema load_schema(const RunConfig& c) {
  try {
    return read_json(require(c.paths.schema, "schema")).get<FeatureSchema>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("malformed schema: ") + e.what());
  }
}

std::vector<std::string> selected_tasks(const RunConfig& c, const model::Table2VecModel& m) {
  if (!c.task.empty()) {
    m.task_index(c.task);
    return {c.task};
  }
  std::vector<std::string> names;
  for (const auto& t : m.tasks()) names.push_back(t.name);
  return names;
}

nlohmann::json cmd_profile(const RunConfig& c) {
  BigTable table = load(c);
  if (c.dynamic_analysis) table = order_records(std::move(table));
  SchemaOptions options;
  options.recognizer = c.recognizer;
  options.dynamic_analysis = c.dynamic_analysis;
  if (!c.paths.kind_overrides.empty()) options.kind_overrides = parse_kind_overrides(read_json(c.paths.kind_overrides));
  const FeatureSchema schema = build_schema(table, options);
  const nlohmann::json stats = compute_stats(table, schema);
  const fs::path dir = out_dir(c);
  write_text(dir / "schema.json", nlohmann::json(schema).dump(2) + "\n");
  write_text(dir / "stats.json", stats.dump(2) + "\n");
  return {{"schema", (dir / "schema.json").string()}, {"stats", (dir / "stats.json").string()}};
}

nlohmann::json cmd_synth(const RunConfig& c) {
  const BigTable table = eval::synth_generate(c.synth);
  const fs::path dir = out_dir(c);
  save_table(table, (dir / "table.csv").string(), eval::synth_format());
  return {{"table", (dir / "table.csv").string()}, {"customers", table.customers.size()}};
}

nlohmann::json cmd_train(const RunConfig& c) {
  const BigTable table = load(c);
  const FeatureSchema schema = load_schema(c);
  const model::TrainResult result = model::train(table, schema, c.model, c.train);
  const fs::path dir = out_dir(c);
  result.model.save((dir / "model.json").string());
  std::string log;
  for (const auto& row : result.log) log += model::to_json(row).dump() + "\n";
  write_text(dir / "train_log.jsonl", log);
  return {{"checkpoint", (dir / "model.json").string()},
          {"log", (dir / "train_log.jsonl").string()},
          {"epochs", result.log.size()},
          {"best_epoch", result.best_epoch}};
}

nlohmann::json cmd_embed(const RunConfig& c) {
  const auto m = model::Table2VecModel::load(require(c.paths.checkpoint, "checkpoint"));
  const auto customers = m.encode(load(c));
  const Matrix reps = m.represent(customers);
  std::string csv = "customer_id";
  for (Index j = 0; j < reps.cols(); ++j) csv += ",r" + std::to_string(j);
  csv += "\n";
  for (std::size_t i = 0; i < customers.size(); ++i) {
    csv += csv_field(customers[i].id);
    for (Index j = 0; j < reps.cols(); ++j) csv += "," + number(reps(static_cast<Index>(i), j));
    csv += "\n";
  }
  const fs::path dir = out_dir(c);
  write_text(dir / "embeddings.csv", csv);
  return {{"embeddings", (dir / "embeddings.csv").string()}, {"customers", customers.size()}};
}

nlohmann::json cmd_predict(const RunConfig& c) {
  const auto m = model::Table2VecModel::load(require(c.paths.checkpoint, "checkpoint"));
  const auto tasks = selected_tasks(c, m);
  const auto customers = m.encode(load(c));
  std::vector<Matrix> probs;
  std::string csv = "customer_id";
  for (const auto& t : tasks) {
    probs.push_back(m.predict(customers, t));
    for (Index k = 0; k < probs.back().cols(); ++k) csv += "," + csv_field("p_" + t + "_" + std::to_string(k));
  }
  csv += "\n";
  for (std::size_t i = 0; i < customers.size(); ++i) {
    csv += csv_field(customers[i].id);
    for (const auto& p : probs)
      for (Index k = 0; k < p.cols(); ++k) csv += "," + number(p(static_cast<Index>(i), k));
    csv += "\n";
  }
  const fs::path dir = out_dir(c);
  write_text(dir / "predictions.csv", csv);
  return {{"predictions", (dir / "predictions.csv").string()}, {"customers", customers.size()}};
}

nlohmann::json cmd_interpret(const RunConfig& c) {
  const auto m = model::Table2VecModel::load(require(c.paths.checkpoint, "checkpoint"));
  const BigTable table = load(c);
  const interpret::GenomeReport report = interpret::genome_report(m, table, c.interpret);
  const fs::path dir = out_dir(c);
  write_text(dir / "genome.json", nlohmann::json(report).dump(2) + "\n");
  nlohmann::json summary = {{"report", (dir / "genome.json").string()}};
  if (c.interpret_text) {
    write_text(dir / "genome.txt", interpret::render_bars(report));
    summary["text"] = (dir / "genome.txt").string();
  }
  return summary;
}

std::vector<int> labels_of(const std::vector<model::EncodedCustomer>& customers, std::size_t task,
                           std::vector<std::size_t>& rows) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < customers.size(); ++i)
    if (customers[i].labels[task] >= 0) {
      rows.push_back(i);
      labels.push_back(customers[i].labels[task] != 0);
    }
  return labels;
}

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(rows[i]));
  return out;
}

nlohmann::json cmd_evaluate(const RunConfig& c) {
  const auto m = model::Table2VecModel::load(require(c.paths.checkpoint, "checkpoint"));
  const BigTable table = load(c);
  const auto customers = m.encode(table);
  nlohmann::json result = nlohmann::json::object();
  if (c.evaluate_mode == "model") {
    for (const auto& task : selected_tasks(c, m)) {
      const std::size_t t = m.task_index(task);
      std::vector<std::size_t> rows;
      const auto labels = labels_of(customers, t, rows);
      const Matrix p = m.predict(customers, task);
      std::vector<double> scores;
      for (auto i : rows) scores.push_back(1.0 - p(static_cast<Index>(i), 0));
      result[task] = {{"customers", rows.size()},
                      {"metrics", eval::evaluate_scores(scores, labels, c.baseline.weighting)}};
    }
  } else if (c.evaluate_mode == "uplift") {
    const Matrix raw = eval::raw_features(table, m.schema());
    const Matrix statics = eval::static_features(table, m.schema());
    const Matrix reps = m.represent(customers);
    for (const auto& task : selected_tasks(c, m)) {
      std::vector<std::size_t> rows;
      const auto labels = labels_of(customers, m.task_index(task), rows);
      const auto on_raw = eval::baseline_linear(take_rows(raw, rows), labels, c.baseline);
      const auto on_static = eval::baseline_linear(take_rows(statics, rows), labels, c.baseline);
      const auto on_reps = eval::baseline_linear(take_rows(reps, rows), labels, c.baseline);
      result[task] = {{"customers", rows.size()},
                      {"raw", on_raw.metrics},
                      {"static", on_static.metrics},
                      {"representation", on_reps.metrics},
                      {"weighted_accuracy_uplift",
                       on_reps.metrics.weighted_accuracy - on_raw.metrics.weighted_accuracy}};
    }
  } else {
    throw Error(ErrorCode::kInvalidConfig, "evaluate mode must be 'model' or 'uplift'");
  }
  const fs::path dir = out_dir(c);
  write_text(dir / "metrics.json", result.dump(2) + "\n");
  return {{"metrics", (dir / "metrics.json").string()}};
}

void print_error(std::ostream& err, const std::string& code, const std::string& message, const std::string& command) {
  nlohmann::json j = {{"error", {{"code", code}, {"message", message}, {"command", command}}}};
  err << j.dump() << std::endl;
}

}  // namespace

void RunConfig::propagate_seed() {
  train.seed = seed;
  interpret.seed = seed;
  synth.seed = seed;
  baseline.seed = seed;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.table = p.value("table", c.paths.table);
      c.paths.schema = p.value("schema", c.paths.schema);
      c.paths.checkpoint = p.value("checkpoint", c.paths.checkpoint);
      c.paths.out = p.value("out", c.paths.out);
      c.paths.kind_overrides = p.value("kind_overrides", c.paths.kind_overrides);
    }
    if (j.contains("table")) {
      const auto& t = j.at("table");
      const std::string delim = t.value("delimiter", std::string(1, c.table.delimiter));
      if (delim.size() != 1) throw Error(ErrorCode::kInvalidConfig, "table.delimiter must be one character");
      c.table.delimiter = delim[0];
      c.table.id_column = t.value("id_column", c.table.id_column);
      if (t.contains("date_column") && !t.at("date_column").is_null())
        c.table.date_column = t.at("date_column").get<std::string>();
      if (t.contains("label_columns") && !t.at("label_columns").is_null())
        c.table.label_columns = t.at("label_columns").get<std::vector<std::string>>();
    }
    if (j.contains("prep")) {
      const auto& p = j.at("prep");
      if (p.contains("recognizer")) c.recognizer = p.at("recognizer").get<RecognizerConfig>();
      c.dynamic_analysis = p.value("dynamic_analysis", c.dynamic_analysis);
    }
    if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<model::TrainConfig>();
    if (j.contains("interpret")) {
      c.interpret = j.at("interpret").get<interpret::InterpretConfig>();
      c.interpret_text = j.at("interpret").value("text", c.interpret_text);
    }
    if (j.contains("synth")) c.synth = j.at("synth").get<eval::SynthConfig>();
    if (j.contains("baseline")) c.baseline = j.at("baseline").get<eval::BaselineConfig>();
    if (j.contains("evaluate")) {
      c.task = j.at("evaluate").value("task", c.task);
      c.evaluate_mode = j.at("evaluate").value("mode", c.evaluate_mode);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("malformed run config: ") + e.what());
  }
  c.propagate_seed();
  return c;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_json(path)); }

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json table = {{"delimiter", std::string(1, c.table.delimiter)}, {"id_column", c.table.id_column}};
  table["date_column"] = c.table.date_column ? nlohmann::json(*c.table.date_column) : nlohmann::json();
  table["label_columns"] = c.table.label_columns ? nlohmann::json(*c.table.label_columns) : nlohmann::json();
  nlohmann::json interpret = c.interpret;
  interpret["text"] = c.interpret_text;
  return {{"seed", c.seed},
          {"paths",
           {{"table", c.paths.table},
            {"schema", c.paths.schema},
            {"checkpoint", c.paths.checkpoint},
            {"out", c.paths.out},
            {"kind_overrides", c.paths.kind_overrides}}},
          {"table", table},
          {"prep", {{"recognizer", c.recognizer}, {"dynamic_analysis", c.dynamic_analysis}}},
          {"model", c.model},
          {"train", c.train},
          {"interpret", interpret},
          {"synth", c.synth},
          {"baseline", c.baseline},
          {"evaluate", {{"task", c.task}, {"mode", c.evaluate_mode}}}};
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Per-customer representation learning over customer-indexed tables"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_path, table, schema, checkpoint, task, mode;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Run seed (overrides the config)");
  app.add_option("--out", out_path, "Output directory (overrides the config)");
  app.add_option("--table", table, "Input table CSV");
  app.add_option("--schema", schema, "Feature schema JSON");
  app.add_option("--checkpoint", checkpoint, "Model checkpoint JSON");
  app.add_option("--task", task, "Restrict to one task");
  app.add_option("--mode", mode, "evaluate: model | uplift");

  struct Command {
    const char* name;
    const char* help;
    ExitCode failure;
    nlohmann::json (*fn)(const RunConfig&);
  };
  const Command commands[] = {
      {"profile", "Recognise feature kinds and report table statistics", kProfileFailed, cmd_profile},
      {"synth", "Generate a synthetic table", kSynthFailed, cmd_synth},
      {"train", "Train a model from a table and schema", kTrainFailed, cmd_train},
      {"embed", "Write one representation row per customer", kEmbedFailed, cmd_embed},
      {"predict", "Write class probabilities per customer", kPredictFailed, cmd_predict},
      {"interpret", "Write a genome report", kInterpretFailed, cmd_interpret},
      {"evaluate", "Write metrics for a labeled table", kEvaluateFailed, cmd_evaluate},
  };
  for (const auto& c : commands) app.add_subcommand(c.name, c.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what(), "");
    return kUsage;
  }

  const Command* chosen = nullptr;
  for (const auto& c : commands)
    if (app.got_subcommand(c.name)) chosen = &c;

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) config.seed = *seed;
    config.propagate_seed();
    if (!out_path.empty()) config.paths.out = out_path;
    if (!table.empty()) config.paths.table = table;
    if (!schema.empty()) config.paths.schema = schema;
    if (!checkpoint.empty()) config.paths.checkpoint = checkpoint;
    if (!task.empty()) config.task = task;
    if (!mode.empty()) config.evaluate_mode = mode;
    out << chosen->fn(config).dump() << std::endl;
    return kOk;
  } catch (const Error& e) {
    print_error(err, std::string(error_code_name(e.code())), e.what(), chosen->name);
  } catch (const std::exception& e) {
    print_error(err, "internal-error", e.what(), chosen->name);
  }
  return chosen->failure;
}

}  // namespace t2v::cli
