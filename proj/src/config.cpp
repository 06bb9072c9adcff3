#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "invlab/harness.hpp"

namespace invlab {

using nlohmann::json;

std::string_view to_string(ModelType type) {
  switch (type) {
    case ModelType::Gaussian: return "gaussian";
    case ModelType::Gmm: return "gmm";
    case ModelType::GmmRandom: return "gmm-random";
  }
  return "?";
}

namespace {

[[noreturn]] void violation(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::SchemaViolation, "field \"" + path + "\": " + msg);
}

std::string join(const std::string& parent, const std::string& key) { return parent.empty() ? key : parent + "." + key; }

// Typed field access on one JSON object, tracking which keys were consumed.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) violation(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  std::string path(const std::string& key) const { return join(path_, key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void require(const std::string& key) const {
    if (!has(key)) violation(path(key), "required field is missing");
  }

  template <typename Int>
  Int integer(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number_unsigned()) {
      auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) violation(path(key), "integer out of range");
      return static_cast<Int>(u);
    }
    if (v.is_number_integer()) {
      auto s = v.get<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (s < 0) violation(path(key), "expected a non-negative integer");
      } else if (s < static_cast<std::int64_t>(std::numeric_limits<Int>::min()) ||
                 s > static_cast<std::int64_t>(std::numeric_limits<Int>::max())) {
        violation(path(key), "integer out of range");
      }
      return static_cast<Int>(s);
    }
    violation(path(key), "expected an integer");
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) violation(path(key), "expected a number");
    return v.get<double>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) violation(path(key), "expected a string");
    return v.get<std::string>();
  }

  template <typename Int>
  void maybe(const std::string& key, Int& out) {
    if (has(key)) out = integer<Int>(key);
  }
  void maybe(const std::string& key, double& out) {
    if (has(key)) out = number(key);
  }
  void maybe(const std::string& key, std::string& out) {
    if (has(key)) out = string(key);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) violation(path(it.key()), "unknown field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T, typename F>
T enum_field(Fields& f, const std::string& key, F&& from_string) {
  std::string s = f.string(key);
  try {
    return from_string(s);
  } catch (const Error&) {
    violation(f.path(key), "unrecognized value \"" + s + "\"");
  }
}

ModelType model_type_from_string(std::string_view s) {
  for (auto t : {ModelType::Gaussian, ModelType::Gmm, ModelType::GmmRandom}) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorCode::SchemaViolation, "unknown model type");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path);
  return ss.str();
}

void parse_schedule(Fields f, ExperimentConfig& c) {
  if (f.has("kind")) {
    c.schedule_kind = enum_field<ScheduleKind>(f, "kind", schedule_kind_from_string);
    if (c.schedule_kind == ScheduleKind::Table) violation(f.path("kind"), "table schedules cannot be generated");
  }
  f.maybe("T", c.schedule_steps);
  f.maybe("beta_start", c.schedule_params.beta_start);
  f.maybe("beta_end", c.schedule_params.beta_end);
  f.maybe("cosine_offset", c.schedule_params.cosine_offset);
  f.maybe("max_beta", c.schedule_params.max_beta);
  f.finish();
}

void parse_grid(Fields f, ExperimentConfig& c) {
  f.maybe("steps", c.steps);
  f.maybe("offset", c.offset);
  f.finish();
}

void parse_model(Fields f, ModelSpec& m, const std::string& base_dir) {
  f.require("type");
  m.type = enum_field<ModelType>(f, "type", model_type_from_string);
  switch (m.type) {
    case ModelType::Gaussian:
      f.maybe("variance", m.variance);
      break;
    case ModelType::Gmm: {
      f.require("file");
      m.file = f.string("file");
      std::filesystem::path p(m.file);
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      std::string text = read_file(p.string());
      try {
        m.gmm = gmm_from_json(text);
      } catch (const Error& e) {
        violation(f.path("file"), e.what());
      }
      break;
    }
    case ModelType::GmmRandom:
      f.maybe("components", m.components);
      f.maybe("mean_scale", m.mean_scale);
      f.maybe("variance_min", m.variance_min);
      f.maybe("variance_max", m.variance_max);
      break;
  }
  f.finish();
}

void parse_error(Fields f, ErrorModel& e) {
  if (f.has("gamma")) {
    const json& g = f.raw("gamma");
    if (g.is_number()) {
      e.gamma = {g.get<double>()};
    } else if (g.is_array() && !g.empty()) {
      e.gamma.clear();
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!g[k].is_number()) violation(f.path("gamma") + "[" + std::to_string(k) + "]", "expected a number");
        e.gamma.push_back(g[k].get<double>());
      }
    } else {
      violation(f.path("gamma"), "expected a number or a non-empty array of numbers");
    }
  }
  f.maybe("rho", e.rho);
  if (f.has("coupling")) e.coupling = enum_field<ErrorCoupling>(f, "coupling", error_coupling_from_string);
  f.finish();
}

void parse_output(Fields f, OutputSpec& o) {
  f.maybe("csv", o.csv);
  f.maybe("bench_csv", o.bench_csv);
  f.maybe("stats_json", o.stats_json);
  f.maybe("histogram_prefix", o.histogram_prefix);
  f.maybe("trajectories", o.trajectories);
  f.finish();
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports "line L, column C" in the message.
    throw Error(ErrorCode::SchemaViolation, std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  Fields f(root, "");
  for (const char* key : {"seed", "trials", "dim", "methods"}) f.require(key);
  c.seed = f.integer<std::uint64_t>("seed");
  c.trials = f.integer<std::int64_t>("trials");
  c.dim = f.integer<int>("dim");

  const json& methods = f.raw("methods");
  if (!methods.is_array()) violation("methods", "expected an array of strings");
  for (std::size_t k = 0; k < methods.size(); ++k) {
    std::string where = "methods[" + std::to_string(k) + "]";
    if (!methods[k].is_string()) violation(where, "expected a string");
    std::string m = methods[k].get<std::string>();
    try {
      InversionMethod::parse(m);
    } catch (const Error& e) {
      violation(where, e.what());
    }
    c.methods.push_back(m);
  }

  if (f.has("schedule")) parse_schedule(Fields(f.raw("schedule"), "schedule"), c);
  if (f.has("grid")) parse_grid(Fields(f.raw("grid"), "grid"), c);
  if (f.has("model")) parse_model(Fields(f.raw("model"), "model"), c.model, base_dir);
  if (f.has("error")) {
    ErrorModel e;
    parse_error(Fields(f.raw("error"), "error"), e);
    c.error = e;
  }
  if (f.has("psnr_peak")) c.psnr_peak = f.number("psnr_peak");
  f.maybe("bins", c.bins);
  f.maybe("threads", c.threads);
  if (f.has("output")) parse_output(Fields(f.raw("output"), "output"), c.output);
  f.finish();

  if (c.error) c.error->seed = c.seed;
  try {
    c.validate();
  } catch (const Error& e) {
    std::string msg = e.what();
    throw Error(ErrorCode::SchemaViolation, msg.substr(to_string(e.code()).size() + 2));
  }
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["dim"] = c.dim;
  j["methods"] = c.methods;
  j["schedule"] = {{"kind", std::string(to_string(c.schedule_kind))},
                   {"T", c.schedule_steps},
                   {"beta_start", c.schedule_params.beta_start},
                   {"beta_end", c.schedule_params.beta_end},
                   {"cosine_offset", c.schedule_params.cosine_offset},
                   {"max_beta", c.schedule_params.max_beta}};
  j["grid"] = {{"steps", c.steps}, {"offset", c.offset}};
  json m = {{"type", std::string(to_string(c.model.type))}};
  switch (c.model.type) {
    case ModelType::Gaussian: m["variance"] = c.model.variance; break;
    case ModelType::Gmm: m["file"] = c.model.file; break;
    case ModelType::GmmRandom:
      m["components"] = c.model.components;
      m["mean_scale"] = c.model.mean_scale;
      m["variance_min"] = c.model.variance_min;
      m["variance_max"] = c.model.variance_max;
      break;
  }
  j["model"] = m;
  if (c.error) {
    json e;
    if (c.error->gamma.size() == 1) {
      e["gamma"] = c.error->gamma.front();
    } else {
      e["gamma"] = c.error->gamma;
    }
    e["rho"] = c.error->rho;
    e["coupling"] = std::string(to_string(c.error->coupling));
    j["error"] = e;
  }
  if (c.psnr_peak) j["psnr_peak"] = *c.psnr_peak;
  j["bins"] = c.bins;
  j["threads"] = c.threads;
  json o = json::object();
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) o[key] = v;
  };
  put("csv", c.output.csv);
  put("bench_csv", c.output.bench_csv);
  put("stats_json", c.output.stats_json);
  put("histogram_prefix", c.output.histogram_prefix);
  put("trajectories", c.output.trajectories);
  if (!o.empty()) j["output"] = o;
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& path) {
  std::string text = read_file(path);
  auto dir = std::filesystem::path(path).parent_path();
  return config_from_json(text, dir.empty() ? "." : dir.string());
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorCode::ConfigError, "field \"" + field + "\": " + msg);
  };
  if (trials < 1) fail("trials", "must be >= 1");
  if (dim < 1) fail("dim", "must be >= 1");
  if (methods.empty()) fail("methods", "at least one method is required");
  if (steps < 2) fail("grid.steps", "must be >= 2");
  if (offset < 0) fail("grid.offset", "must be >= 0");
  if (schedule_steps < 1) fail("schedule.T", "must be >= 1");
  if (bins < 1) fail("bins", "must be >= 1");
  if (threads < 0) fail("threads", "must be >= 0");
  if (psnr_peak && !(*psnr_peak > 0.0 && std::isfinite(*psnr_peak))) fail("psnr_peak", "must be positive");
  switch (model.type) {
    case ModelType::Gaussian:
      if (!(model.variance > 0.0)) fail("model.variance", "must be positive");
      break;
    case ModelType::Gmm:
      if (model.gmm.dim() != dim) {
        fail("model.file", "mixture dimension " + std::to_string(model.gmm.dim()) + " does not match dim " +
                               std::to_string(dim));
      }
      break;
    case ModelType::GmmRandom:
      if (model.components < 1) fail("model.components", "must be >= 1");
      if (!(model.mean_scale >= 0.0)) fail("model.mean_scale", "must be >= 0");
      if (!(model.variance_min > 0.0 && model.variance_min <= model.variance_max)) {
        fail("model.variance_min", "need 0 < variance_min <= variance_max");
      }
      break;
  }
  if (error) {
    try {
      error->validate();
    } catch (const Error& e) {
      fail("error", e.what());
    }
  }
  parsed_methods();
  try {
    auto s = make_schedule();
    make_grid(s, steps, offset);
  } catch (const Error& e) {
    fail("schedule", e.what());
  }
}

NoiseSchedule ExperimentConfig::make_schedule() const {
  return build_schedule(schedule_kind, schedule_steps, schedule_params);
}

std::vector<InversionMethod> ExperimentConfig::parsed_methods() const {
  std::vector<InversionMethod> out;
  out.reserve(methods.size());
  for (const auto& m : methods) out.push_back(InversionMethod::parse(m));
  return out;
}

}  // namespace invlab
