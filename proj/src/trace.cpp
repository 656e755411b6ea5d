#include "transkim/trace.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "transkim/errors.hpp"

namespace transkim {

using nlohmann::json;

void append_to_trace(SkimTrace& trace, const SkimState& state, const Batch& batch,
                     std::size_t first_id) {
  if (state.batch != batch.batch || state.seq != batch.seq) {
    throw DimensionError("append_to_trace: skim state does not match the batch");
  }
  for (std::size_t b = 0; b < batch.batch; ++b) {
    TraceExample ex;
    ex.id = first_id + b;
    ex.true_len = batch.true_lens[b];
    ex.batch_len = batch.seq;
    for (std::size_t n = 0; n < ex.true_len; ++n) {
      ex.tokens.push_back(token_string(batch.token_ids[b * batch.seq + n]));
      ex.prune_layer.push_back(state.prune_layer[b * batch.seq + n]);
    }
    for (std::size_t l = 1; l <= state.n_layers; ++l) {
      std::size_t kept = 0;
      for (std::size_t n = 0; n < ex.true_len; ++n) kept += state.alive(l, b, n) ? 1 : 0;
      ex.kept_per_layer.push_back(kept);
    }
    trace.examples.push_back(std::move(ex));
  }
}

std::string trace_to_json(const SkimTrace& trace) {
  json j;
  j["config_digest"] = trace.config_digest;
  j["examples"] = json::array();
  for (const auto& ex : trace.examples) {
    j["examples"].push_back({{"id", ex.id},
                             {"tokens", ex.tokens},
                             {"true_len", ex.true_len},
                             {"batch_len", ex.batch_len},
                             {"prune_layer", ex.prune_layer},
                             {"kept_per_layer", ex.kept_per_layer}});
  }
  return j.dump(1) + "\n";
}

namespace {

[[noreturn]] void fault(const std::string& path, const std::string& msg) {
  throw SchemaError(path + ": " + msg);
}

const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) fault(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fault(path + "." + key, "missing");
  return *it;
}

std::size_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) fault(path, "expected a non-negative integer");
  return v.get<std::size_t>();
}

const json& as_array(const json& v, const std::string& path) {
  if (!v.is_array()) fault(path, "expected an array");
  return v;
}

}  // namespace

SkimTrace trace_from_json(const std::string& text, std::size_t n_layers) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fault("$", std::string("not valid JSON (") + e.what() + ")");
  }
  SkimTrace trace;
  const json& digest = field(j, "config_digest", "$");
  if (!digest.is_string()) fault("$.config_digest", "expected a string");
  trace.config_digest = digest.get<std::string>();
  const json& examples = as_array(field(j, "examples", "$"), "$.examples");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::string at = "$.examples[" + std::to_string(i) + "]";
    const json& e = examples[i];
    TraceExample ex;
    ex.id = as_count(field(e, "id", at), at + ".id");
    ex.true_len = as_count(field(e, "true_len", at), at + ".true_len");
    ex.batch_len = e.contains("batch_len") ? as_count(e["batch_len"], at + ".batch_len")
                                           : ex.true_len;
    const json& toks = as_array(field(e, "tokens", at), at + ".tokens");
    for (std::size_t k = 0; k < toks.size(); ++k) {
      if (!toks[k].is_string()) fault(at + ".tokens[" + std::to_string(k) + "]", "expected a string");
      ex.tokens.push_back(toks[k].get<std::string>());
    }
    const json& pl = as_array(field(e, "prune_layer", at), at + ".prune_layer");
    for (std::size_t k = 0; k < pl.size(); ++k) {
      const std::string p = at + ".prune_layer[" + std::to_string(k) + "]";
      if (!pl[k].is_number_integer()) fault(p, "expected an integer");
      const int v = pl[k].get<int>();
      if (v < 1 || (n_layers > 0 && v > static_cast<int>(n_layers) + 1)) {
        fault(p, "prune layer " + std::to_string(v) + " outside [1, L+1]");
      }
      ex.prune_layer.push_back(v);
    }
    const json& kept = as_array(field(e, "kept_per_layer", at), at + ".kept_per_layer");
    for (std::size_t k = 0; k < kept.size(); ++k) {
      ex.kept_per_layer.push_back(as_count(kept[k], at + ".kept_per_layer[" + std::to_string(k) + "]"));
    }
    if (ex.tokens.size() != ex.true_len) fault(at + ".tokens", "length differs from true_len");
    if (ex.prune_layer.size() != ex.true_len) fault(at + ".prune_layer", "length differs from true_len");
    if (ex.batch_len < ex.true_len) fault(at + ".batch_len", "smaller than true_len");
    if (n_layers > 0 && ex.kept_per_layer.size() != n_layers) {
      fault(at + ".kept_per_layer", "has " + std::to_string(ex.kept_per_layer.size()) +
                                        " entries, expected " + std::to_string(n_layers));
    }
    for (std::size_t l = 1; l <= ex.kept_per_layer.size(); ++l) {
      std::size_t alive = 0;
      for (const int v : ex.prune_layer) alive += v > static_cast<int>(l) ? 1 : 0;
      if (alive != ex.kept_per_layer[l - 1]) {
        fault(at + ".kept_per_layer[" + std::to_string(l - 1) + "]",
              "count " + std::to_string(ex.kept_per_layer[l - 1]) +
                  " disagrees with prune_layer (" + std::to_string(alive) + ")");
      }
    }
    trace.examples.push_back(std::move(ex));
  }
  return trace;
}

void write_trace(const std::string& path, const SkimTrace& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write trace " + path);
  os << trace_to_json(trace);
}

SkimTrace read_trace(const std::string& path, std::size_t n_layers) {
  std::ifstream is(path);
  if (!is) throw SchemaError(path + ": cannot open trace");
  std::stringstream ss;
  ss << is.rdbuf();
  return trace_from_json(ss.str(), n_layers);
}

SkimQuality skim_quality(const SkimTrace& trace, std::span<const Example> examples,
                         std::size_t n_layers) {
  if (examples.size() != trace.examples.size()) {
    throw DimensionError("skim_quality: " + std::to_string(examples.size()) + " examples for " +
                         std::to_string(trace.examples.size()) + " trace records");
  }
  SkimQuality q;
  std::size_t skimmed_filler = 0;
  std::size_t kept_relevant = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& rec = trace.examples[i];
    const auto& ex = examples[i];
    if (ex.relevant.size() != rec.prune_layer.size()) {
      throw DimensionError("skim_quality: example " + std::to_string(i) +
                           " length differs from its trace record");
    }
    for (std::size_t n = 0; n < rec.prune_layer.size(); ++n) {
      const bool never = rec.prune_layer[n] == static_cast<int>(n_layers) + 1;
      if (ex.relevant[n]) {
        ++q.relevant_tokens;
        kept_relevant += never ? 1 : 0;
      } else {
        ++q.filler_tokens;
        skimmed_filler += never ? 0 : 1;
      }
    }
  }
  q.skim_recall = q.filler_tokens ? static_cast<double>(skimmed_filler) / q.filler_tokens : 0.0;
  q.keep_precision =
      q.relevant_tokens ? static_cast<double>(kept_relevant) / q.relevant_tokens : 0.0;
  return q;
}

}  // namespace transkim
