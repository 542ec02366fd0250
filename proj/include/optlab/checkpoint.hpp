#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "optlab/config_json.hpp"
#include "optlab/data.hpp"
#include "optlab/model.hpp"
#include "optlab/optim.hpp"
#include "optlab/train.hpp"

namespace optlab {

// All on-disk containers share one layout: magic, version, kind, a JSON
// header describing the payload, then one raw little-endian f64/i32 blob.
namespace ckfile {

constexpr char kMagic[8] = {'O', 'P', 'T', 'L', 'A', 'B', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kKindModel = 1;
constexpr uint32_t kKindOptimizerState = 2;
constexpr uint32_t kKindRun = 3;
constexpr uint32_t kKindCorpus = 4;

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint: truncated file");
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

inline void write_container(const std::string& path, uint32_t kind, const json& header,
                            const std::vector<double>& blob) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  write_bytes(os, kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kVersion);
  write_pod<uint32_t>(os, kind);
  const std::string h = header.dump();
  write_pod<uint64_t>(os, h.size());
  write_bytes(os, h.data(), h.size());
  write_pod<uint64_t>(os, blob.size());
  write_bytes(os, blob.data(), blob.size() * sizeof(double));
  if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

struct Container {
  json header;
  std::vector<double> blob;
};

inline Container read_container(const std::string& path, uint32_t expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  read_bytes(is, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const uint32_t version = read_pod<uint32_t>(is);
  if (version != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  const uint32_t kind = read_pod<uint32_t>(is);
  if (kind != expected_kind) {
    throw IoError("checkpoint: '" + path + "' holds kind " + std::to_string(kind) +
                  ", expected " + std::to_string(expected_kind));
  }
  Container c;
  const uint64_t hlen = read_pod<uint64_t>(is);
  std::string h(hlen, '\0');
  read_bytes(is, h.data(), hlen);
  c.header = json::parse(h);
  const uint64_t blen = read_pod<uint64_t>(is);
  c.blob.resize(blen);
  read_bytes(is, c.blob.data(), blen * sizeof(double));
  return c;
}

inline json param_manifest(const std::vector<Param>& params) {
  json manifest = json::array();
  for (const auto& p : params) {
    manifest.push_back(json{{"name", p.name},
                            {"shape", p.value.shape()},
                            {"role", mup_role_name(p.role)},
                            {"fan_in", p.fan_in},
                            {"fan_out", p.fan_out}});
  }
  return manifest;
}

inline void append_tensor(std::vector<double>& blob, const Tensor& t) {
  blob.insert(blob.end(), t.values().begin(), t.values().end());
}

inline Tensor take_tensor(const std::vector<double>& blob, size_t& off,
                          const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  if (off + static_cast<size_t>(n) > blob.size()) throw IoError("checkpoint: blob too short");
  Tensor t(shape, std::vector<double>(blob.begin() + static_cast<int64_t>(off),
                                      blob.begin() + static_cast<int64_t>(off) + n));
  off += static_cast<size_t>(n);
  return t;
}

inline MupRole role_from_string(const std::string& s) {
  for (MupRole r : {MupRole::kInputWeight, MupRole::kOutputWeight, MupRole::kHiddenWeight,
                    MupRole::kBias, MupRole::kNormGain}) {
    if (s == mup_role_name(r)) return r;
  }
  throw IoError("checkpoint: unknown parameter role '" + s + "'");
}

inline json model_header(const Model& m) {
  return json{{"config", m.config},
              {"mup", m.mup},
              {"init_seed", m.init_seed},
              {"embedding_multiplier", m.embedding_multiplier},
              {"output_multiplier", m.output_multiplier},
              {"params", param_manifest(m.params)}};
}

inline Model model_from_header(const json& h, const std::vector<double>& blob, size_t& off) {
  Model m;
  h.at("config").get_to(m.config);
  h.at("mup").get_to(m.mup);
  h.at("init_seed").get_to(m.init_seed);
  h.at("embedding_multiplier").get_to(m.embedding_multiplier);
  h.at("output_multiplier").get_to(m.output_multiplier);
  for (const auto& entry : h.at("params")) {
    Param p;
    p.name = entry.at("name").get<std::string>();
    p.role = role_from_string(entry.at("role").get<std::string>());
    p.fan_in = entry.at("fan_in").get<int64_t>();
    p.fan_out = entry.at("fan_out").get<int64_t>();
    p.value = take_tensor(blob, off, entry.at("shape").get<std::vector<int64_t>>());
    m.params.push_back(std::move(p));
  }
  return m;
}

inline json state_header(const OptimizerState& s, const OptimizerConfig& cfg) {
  json manifest_m = json::array();
  for (const auto& [name, t] : s.m) manifest_m.push_back(json{{"name", name}, {"shape", t.shape()}});
  json manifest_v = json::array();
  for (const auto& [name, t] : s.v_or_h) {
    manifest_v.push_back(json{{"name", name}, {"shape", t.shape()}});
  }
  return json{{"optimizer", cfg}, {"t", s.t}, {"m", manifest_m}, {"v_or_h", manifest_v}};
}

inline OptimizerState state_from_header(const json& h, const std::vector<double>& blob,
                                        size_t& off) {
  OptimizerState s;
  h.at("t").get_to(s.t);
  for (const auto& entry : h.at("m")) {
    s.m.emplace(entry.at("name").get<std::string>(),
                take_tensor(blob, off, entry.at("shape").get<std::vector<int64_t>>()));
  }
  for (const auto& entry : h.at("v_or_h")) {
    s.v_or_h.emplace(entry.at("name").get<std::string>(),
                     take_tensor(blob, off, entry.at("shape").get<std::vector<int64_t>>()));
  }
  return s;
}

inline json record_json(const RunRecord& r) {
  return json{{"steps", r.steps}, {"evals", r.evals}, {"wall_clock_seconds", r.wall_clock_seconds}};
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  j.at("steps").get_to(r.steps);
  j.at("evals").get_to(r.evals);
  j.at("wall_clock_seconds").get_to(r.wall_clock_seconds);
  return r;
}

}  // namespace ckfile

inline void save_model(const std::string& path, const Model& m) {
  std::vector<double> blob;
  blob.reserve(static_cast<size_t>(m.num_params()));
  for (const auto& p : m.params) ckfile::append_tensor(blob, p.value);
  ckfile::write_container(path, ckfile::kKindModel, ckfile::model_header(m), blob);
}

inline Model load_model(const std::string& path) {
  auto c = ckfile::read_container(path, ckfile::kKindModel);
  size_t off = 0;
  Model m = ckfile::model_from_header(c.header, c.blob, off);
  if (off != c.blob.size()) throw IoError("load_model: trailing bytes in '" + path + "'");
  return m;
}

inline void save_optimizer_state(const std::string& path, const OptimizerState& s,
                                 const OptimizerConfig& cfg) {
  std::vector<double> blob;
  for (const auto& [name, t] : s.m) ckfile::append_tensor(blob, t);
  for (const auto& [name, t] : s.v_or_h) ckfile::append_tensor(blob, t);
  ckfile::write_container(path, ckfile::kKindOptimizerState, ckfile::state_header(s, cfg), blob);
}

inline std::pair<OptimizerState, OptimizerConfig> load_optimizer_state(const std::string& path) {
  auto c = ckfile::read_container(path, ckfile::kKindOptimizerState);
  size_t off = 0;
  OptimizerState s = ckfile::state_from_header(c.header, c.blob, off);
  OptimizerConfig cfg;
  c.header.at("optimizer").get_to(cfg);
  if (off != c.blob.size()) throw IoError("load_optimizer_state: trailing bytes");
  return {std::move(s), cfg};
}

inline void save_run_checkpoint(const std::string& path, const RunCheckpoint& ck,
                                const OptimizerConfig& opt_cfg) {
  std::vector<double> blob;
  for (const auto& p : ck.model.params) ckfile::append_tensor(blob, p.value);
  for (const auto& [name, t] : ck.opt_state.m) ckfile::append_tensor(blob, t);
  for (const auto& [name, t] : ck.opt_state.v_or_h) ckfile::append_tensor(blob, t);
  json header{{"config_digest", ck.config_digest},
              {"corpus_hash", ck.corpus_hash},
              {"steps_done", ck.steps_done},
              {"tokens_seen", ck.tokens_seen},
              {"model", ckfile::model_header(ck.model)},
              {"opt_state", ckfile::state_header(ck.opt_state, opt_cfg)},
              {"record", ckfile::record_json(ck.record)}};
  ckfile::write_container(path, ckfile::kKindRun, header, blob);
}

inline RunCheckpoint load_run_checkpoint(const std::string& path) {
  auto c = ckfile::read_container(path, ckfile::kKindRun);
  RunCheckpoint ck;
  c.header.at("config_digest").get_to(ck.config_digest);
  c.header.at("corpus_hash").get_to(ck.corpus_hash);
  c.header.at("steps_done").get_to(ck.steps_done);
  c.header.at("tokens_seen").get_to(ck.tokens_seen);
  size_t off = 0;
  ck.model = ckfile::model_from_header(c.header.at("model"), c.blob, off);
  ck.opt_state = ckfile::state_from_header(c.header.at("opt_state"), c.blob, off);
  ck.record = ckfile::record_from_json(c.header.at("record"));
  if (off != c.blob.size()) throw IoError("load_run_checkpoint: trailing bytes");
  return ck;
}

// Token cache: int32 ids stored in the f64 blob slots pairwise-packed would
// be wasteful; a corpus is small enough to store one token per slot.
inline void save_corpus(const std::string& path, const Corpus& corpus) {
  std::vector<double> blob;
  blob.reserve(corpus.tokens.size());
  for (int32_t t : corpus.tokens) blob.push_back(static_cast<double>(t));
  json header{{"vocab_size", corpus.vocab_size},
              {"provenance", corpus.provenance},
              {"content_hash", corpus.content_hash},
              {"n_tokens", corpus.tokens.size()}};
  ckfile::write_container(path, ckfile::kKindCorpus, header, blob);
}

inline Corpus load_corpus(const std::string& path) {
  auto c = ckfile::read_container(path, ckfile::kKindCorpus);
  Corpus corpus;
  c.header.at("vocab_size").get_to(corpus.vocab_size);
  c.header.at("provenance").get_to(corpus.provenance);
  corpus.tokens.reserve(c.blob.size());
  for (double v : c.blob) corpus.tokens.push_back(static_cast<int32_t>(v));
  corpus.content_hash = token_hash(corpus.tokens);
  uint64_t recorded = 0;
  c.header.at("content_hash").get_to(recorded);
  if (recorded != corpus.content_hash) {
    throw IoError("load_corpus: content hash mismatch in '" + path + "'");
  }
  return corpus;
}

// Line-delimited run record: one JSON object per step, eval lines
// interleaved in token order, then a summary object at the end.
inline void save_run_record_jsonl(const std::string& path, const RunRecord& rec) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("save_run_record_jsonl: cannot open '" + path + "'");
  size_t e = 0;
  for (const auto& ev : rec.evals) {
    if (ev.tokens_seen == 0) {
      os << json(ev).dump() << '\n';
      ++e;
    }
  }
  for (const auto& st : rec.steps) {
    os << json(st).dump() << '\n';
    while (e < rec.evals.size() && rec.evals[e].tokens_seen <= st.tokens_seen) {
      os << json(rec.evals[e]).dump() << '\n';
      ++e;
    }
  }
  for (; e < rec.evals.size(); ++e) os << json(rec.evals[e]).dump() << '\n';
  json summary{{"type", "summary"},
               {"num_steps", rec.steps.size()},
               {"wall_clock_seconds", rec.wall_clock_seconds}};
  if (!rec.steps.empty()) {
    summary["final_train_loss"] = rec.steps.back().train_loss;
    summary["tokens"] = rec.steps.back().tokens_seen;
  }
  if (!rec.evals.empty()) summary["final_val_loss"] = rec.evals.back().val_loss;
  os << summary.dump() << '\n';
}

inline RunRecord load_run_record_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_run_record_jsonl: cannot open '" + path + "'");
  RunRecord rec;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string type = j.value("type", "step");
    if (type == "step") {
      rec.steps.push_back(j.get<StepRecord>());
    } else if (type == "eval") {
      rec.evals.push_back(j.get<EvalRecord>());
    } else if (type == "summary") {
      rec.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    }
  }
  return rec;
}

}  // namespace optlab
