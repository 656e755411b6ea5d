#include "transkim/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "transkim/errors.hpp"

namespace transkim {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) {
    throw std::invalid_argument("'" + v + "' is not a valid number");
  }
  return out;
}

template <typename N>
std::vector<N> parse_list(const std::string& v) {
  std::vector<N> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<N>(item));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename N>
std::string format_list(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<N>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Key make_int(std::string name, Get ref) {
  return {std::move(name),
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<int>(v); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Key make_double(std::string name, Get ref) {
  return {std::move(name),
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<double>(v); },
          [ref](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(make_int("model.n_layers", [](RunConfig& c) -> int& { return c.model.n_layers; }));
    k.push_back(make_int("model.n_heads", [](RunConfig& c) -> int& { return c.model.n_heads; }));
    k.push_back(make_int("model.d_model", [](RunConfig& c) -> int& { return c.model.d_model; }));
    k.push_back(make_int("model.d_ffn", [](RunConfig& c) -> int& { return c.model.d_ffn; }));
    k.push_back(make_int("model.vocab_size", [](RunConfig& c) -> int& { return c.model.vocab_size; }));
    k.push_back(make_int("model.max_len", [](RunConfig& c) -> int& { return c.model.max_len; }));
    k.push_back(make_double("model.tau", [](RunConfig& c) -> double& { return c.model.tau; }));
    k.push_back(make_double("model.mu0", [](RunConfig& c) -> double& { return c.model.mu0; }));
    k.push_back(make_double("model.sigma", [](RunConfig& c) -> double& { return c.model.sigma; }));
    k.push_back(make_double("model.ln_eps", [](RunConfig& c) -> double& { return c.model.ln_eps; }));
    k.push_back({"model.force_keep",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "cls_only") c.model.force_keep = ForceKeep::kClsOnly;
                   else if (v == "none") c.model.force_keep = ForceKeep::kNone;
                   else if (v == "custom") c.model.force_keep = ForceKeep::kCustom;
                   else throw std::invalid_argument("expected cls_only|none|custom, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return to_string(c.model.force_keep); }});
    k.push_back({"model.force_keep_positions",
                 [](RunConfig& c, const std::string& v) {
                   c.model.force_keep_positions = parse_list<int>(v);
                 },
                 [](const RunConfig& c) { return format_list(c.model.force_keep_positions); }});
    k.push_back({"model.mask_mode",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "additive") c.model.mask_mode = MaskMode::kAdditive;
                   else if (v == "multiplicative") c.model.mask_mode = MaskMode::kMultiplicative;
                   else throw std::invalid_argument("expected additive|multiplicative, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return to_string(c.model.mask_mode); }});
    k.push_back(make_double("lambda", [](RunConfig& c) -> double& { return c.model.lambda; }));
    k.push_back({"task.kind",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "needle") c.task.kind = TaskKind::kNeedle;
                   else if (v == "span") c.task.kind = TaskKind::kSpan;
                   else throw std::invalid_argument("expected needle|span, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.task.kind == TaskKind::kNeedle ? "needle" : "span");
                 }});
    k.push_back(make_int("task.n_train", [](RunConfig& c) -> int& { return c.task.n_train; }));
    k.push_back(make_int("task.n_eval", [](RunConfig& c) -> int& { return c.task.n_eval; }));
    k.push_back(make_int("task.seq_len_min", [](RunConfig& c) -> int& { return c.task.seq_len_min; }));
    k.push_back(make_int("task.seq_len_max", [](RunConfig& c) -> int& { return c.task.seq_len_max; }));
    k.push_back(make_int("task.n_signal", [](RunConfig& c) -> int& { return c.task.n_signal; }));
    k.push_back(make_int("task.span_len_min", [](RunConfig& c) -> int& { return c.task.span_len_min; }));
    k.push_back(make_int("task.span_len_max", [](RunConfig& c) -> int& { return c.task.span_len_max; }));
    k.push_back(make_double("optimizer.lr", [](RunConfig& c) -> double& { return c.optimizer.lr; }));
    k.push_back(make_double("optimizer.warmup_frac",
                            [](RunConfig& c) -> double& { return c.optimizer.warmup_frac; }));
    k.push_back(make_double("optimizer.clip_norm",
                            [](RunConfig& c) -> double& { return c.optimizer.clip_norm; }));
    k.push_back(make_int("optimizer.epochs", [](RunConfig& c) -> int& { return c.optimizer.epochs; }));
    k.push_back(make_int("optimizer.batch_size",
                         [](RunConfig& c) -> int& { return c.optimizer.batch_size; }));
    k.push_back({"optimizer.policy",
                 [](RunConfig& c, const std::string& v) { c.optimizer.policy = parse_policy(v); },
                 [](const RunConfig& c) { return to_string(c.optimizer.policy); }});
    k.push_back({"seed",
                 [](RunConfig& c, const std::string& v) {
                   c.optimizer.seed = parse_number<std::uint64_t>(v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.optimizer.seed); }});
    k.push_back({"sweep.lambdas",
                 [](RunConfig& c, const std::string& v) { c.lambda_grid = parse_list<double>(v); },
                 [](const RunConfig& c) { return format_list(c.lambda_grid); }});
    k.push_back({"eval.policy",
                 [](RunConfig& c, const std::string& v) { c.eval_policy = parse_policy(v); },
                 [](const RunConfig& c) { return to_string(c.eval_policy); }});
    k.push_back({"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const RunConfig& c) { return c.out_dir; }});
    return k;
  }();
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void apply(RunConfig& c, const std::string& line, const std::string& where,
           std::vector<std::string>& errors, std::set<std::string>* seen) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    errors.push_back(where + ": expected key = value, got '" + line + "'");
    return;
  }
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  const Key* k = find_key(key);
  if (!k) {
    errors.push_back(where + ": " + key + ": unknown key");
    return;
  }
  if (seen && !seen->insert(key).second) {
    errors.push_back(where + ": " + key + ": duplicate key");
    return;
  }
  try {
    k->set(c, value);
  } catch (const std::exception& e) {
    errors.push_back(where + ": " + key + ": " + e.what());
  }
}

std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) out += (i ? "\n" : "") + lines[i];
  return out;
}

}  // namespace

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source,
                           std::span<const std::string> overrides) {
  RunConfig c;
  std::vector<std::string> errors;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string raw;
  for (std::size_t lineno = 1; std::getline(ss, raw); ++lineno) {
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    apply(c, line, source + ":" + std::to_string(lineno), errors, &seen);
  }
  for (const auto& o : overrides) apply(c, o, "--set " + o, errors, nullptr);
  if (!errors.empty()) throw ConfigError(join(errors));
  c.model.head = c.task.kind == TaskKind::kSpan ? HeadKind::kToken : HeadKind::kSequence;
  c.model.n_classes = 2;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path, std::span<const std::string> overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot read config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path, overrides);
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  try {
    model.validate();
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  need(task.n_train >= 1, "task.n_train: must be >= 1");
  need(task.n_eval >= 1, "task.n_eval: must be >= 1");
  need(task.seq_len_min >= 1 && task.seq_len_min <= task.seq_len_max,
       "task.seq_len_min: must lie in [1, task.seq_len_max]");
  need(task.seq_len_max + 1 <= model.max_len,
       "task.seq_len_max: " + std::to_string(task.seq_len_max) +
           " plus [CLS] exceeds model.max_len " + std::to_string(model.max_len));
  need(model.vocab_size > kSignalEnd,
       "model.vocab_size: must exceed " + std::to_string(kSignalEnd) + " to leave filler ids");
  if (task.kind == TaskKind::kNeedle) {
    need(task.n_signal >= 1 && task.n_signal <= task.seq_len_min,
         "task.n_signal: must lie in [1, task.seq_len_min]");
  } else {
    need(task.span_len_min >= 1 && task.span_len_min <= task.span_len_max,
         "task.span_len_min: must lie in [1, task.span_len_max]");
  }
  need(optimizer.lr > 0, "optimizer.lr: must be > 0");
  need(optimizer.warmup_frac >= 0 && optimizer.warmup_frac < 1,
       "optimizer.warmup_frac: must lie in [0, 1)");
  need(optimizer.clip_norm >= 0, "optimizer.clip_norm: must be >= 0");
  need(optimizer.epochs >= 1, "optimizer.epochs: must be >= 1");
  need(optimizer.batch_size >= 1, "optimizer.batch_size: must be >= 1");
  need(optimizer.policy != PaddingPolicy::kNone || optimizer.batch_size == 1,
       "optimizer.policy: none requires optimizer.batch_size = 1");
  for (const double l : lambda_grid) {
    need(l >= 0 && l <= 1, "sweep.lambdas: " + format_double(l) + " outside [0, 1]");
  }
  need(!out_dir.empty(), "out_dir: must not be empty");
  if (!errors.empty()) throw ConfigError(join(errors));
}

}  // namespace transkim
