#pragma once

// Command-line front end.
//
//   tpc [--config PATH] compress | curate ctd | curate mcqr | reward refine | eval | serve | version
//
// Exit codes: 0 success, 1 input/output or parse error, 2 usage error,
// 3 backend failure. Every artifact written here carries the config digest
// and a run id derived from (digest, command, input digests); manifests name
// inputs by basename so runs from different directories are byte-identical.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <map>

#include "CLI11.hpp"
#include "tpc/service.hpp"

namespace tpc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBackend = 3;

inline constexpr std::string_view kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  input/output or parse error\n"
    "  2  usage error (bad flags, invalid constraint)\n"
    "  3  backend failure (unavailable, rejected, protocol or numeric contract)";

inline int exit_code_for(ErrorCode code) {
  if (is_backend_failure(code)) return kExitBackend;
  if (code == ErrorCode::InvalidConstraint) return kExitUsage;
  return kExitIo;
}

/// sha256 of a file, or for a directory of the sorted "name\tsha256" lines of
/// its regular files.
inline std::string input_digest(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return sha256_hex(read_file(path));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f.filename().string() + "\t" + sha256_hex(read_file(f.string())) + "\n";
  return sha256_hex(listing);
}

inline std::string basename_of(const std::string& path) {
  auto p = std::filesystem::path(path);
  if (!p.has_filename()) p = p.parent_path();
  return p.filename().string();
}

struct RunContext {
  EngineConfig config;
  std::string digest;
  std::string created_at;
  std::string command;
  std::map<std::string, std::string> inputs;  // basename -> sha256
  std::string run_id;

  RunContext(EngineConfig c, std::string cmd, const std::vector<std::pair<std::string, std::string>>& named_inputs)
      : config(std::move(c)),
        digest(config_digest(config)),
        created_at(resolve_created_at(config)),
        command(std::move(cmd)) {
    std::vector<std::string> digests;
    for (const auto& [path, sha] : named_inputs) {
      inputs[basename_of(path)] = sha;
      digests.push_back(sha);
    }
    run_id = make_run_id(digest, command, digests);
  }

  Provenance provenance() const { return {run_id, digest}; }

  nlohmann::json manifest(std::size_t count, const nlohmann::json& extra = nlohmann::json::object()) const {
    nlohmann::json j = extra;
    j.update({{"run_id", run_id},
              {"config_digest", digest},
              {"command", command},
              {"created_at", created_at},
              {"inputs", inputs},
              {"versions", {{"engine", kEngineVersion}, {"segmenter_rules", kSegmenterRuleVersion}}},
              {"count", count}});
    return j;
  }
};

inline void write_manifest(const std::string& out_path, const nlohmann::json& manifest) {
  write_file(out_path + ".manifest.json", manifest.dump(2) + "\n");
}

inline std::string rejects_path(const std::string& out_path) { return out_path + ".rejects.jsonl"; }

namespace detail {

inline std::atomic<bool> g_stop_requested{false};

inline void on_stop_signal(int) { g_stop_requested = true; }

}  // namespace detail

/// Parses and runs one command. `in` backs `compress` without --in.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
                   std::istream& in = std::cin) {
  CLI::App app{"Task-aware prompt compression: compress, curate, refine, evaluate and serve."};
  app.footer(std::string(kExitCodeHelp));
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Engine config JSON (defaults apply when omitted)")
      ->check(CLI::ExistingFile);

  // compress
  auto* compress_cmd = app.add_subcommand("compress", "Compress one document");
  std::string c_in, c_out, c_question, c_stats;
  std::optional<std::size_t> c_budget, c_topk;
  std::optional<double> c_ratio;
  compress_cmd->add_option("--in", c_in, "Input text file (stdin when omitted)")->check(CLI::ExistingFile);
  compress_cmd->add_option("--out", c_out, "Write the compressed text here (stdout when omitted)");
  auto* o_budget = compress_cmd->add_option("--budget", c_budget, "Token budget");
  auto* o_ratio = compress_cmd->add_option("--ratio", c_ratio, "Compression ratio (original / kept)");
  auto* o_topk = compress_cmd->add_option("--top-k", c_topk, "Keep the k highest-scoring sentences");
  o_budget->excludes(o_ratio)->excludes(o_topk);
  o_ratio->excludes(o_topk);
  compress_cmd->add_option("--question", c_question, "Explicit question; skips the task descriptor");
  compress_cmd->add_option("--stats", c_stats, "Write a JSON report (indices, scores, tokens)");

  // curate
  auto* curate_cmd = app.add_subcommand("curate", "Build training data from a corpus");
  curate_cmd->require_subcommand(1);
  std::string k_corpus, k_out;
  bool k_raw_only = false;
  auto* ctd_cmd = curate_cmd->add_subcommand("ctd", "Document/query pairs for the task descriptor");
  auto* mcqr_cmd = curate_cmd->add_subcommand("mcqr", "Multi-hop question tuples with positive/negative sentences");
  for (auto* sub : {ctd_cmd, mcqr_cmd}) {
    sub->add_option("--corpus", k_corpus, "Directory of .txt files or JSON-Lines {id, text}")
        ->required()
        ->check(CLI::ExistingPath);
    sub->add_option("--out", k_out, "Output JSON-Lines path")->required();
  }
  ctd_cmd->add_flag("--raw-only", k_raw_only, "Stop after the raw query stage");

  // reward refine
  auto* reward_cmd = app.add_subcommand("reward", "Reward-guided refinement of the task descriptor");
  reward_cmd->require_subcommand(1);
  auto* refine_cmd = reward_cmd->add_subcommand("refine", "Best-of-N task descriptions scored by output divergence");
  std::string r_doc, r_corpus, r_out, r_rewards;
  std::optional<std::size_t> r_n;
  auto* o_doc = refine_cmd->add_option("--doc", r_doc, "Single text document")->check(CLI::ExistingFile);
  auto* o_corpus = refine_cmd->add_option("--corpus", r_corpus, "Corpus directory or JSON-Lines")
                       ->check(CLI::ExistingPath);
  o_doc->excludes(o_corpus);
  refine_cmd->add_option("--n", r_n, "Candidates per document (overrides refine.n_candidates)");
  refine_cmd->add_option("--out", r_out, "SFT JSON-Lines output")->required();
  refine_cmd->add_option("--rewards", r_rewards, "Also write every candidate's reward record here");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score compressed prompts on downstream tasks");
  std::string e_cases, e_mode = "prompt_aware", e_out, e_csv;
  eval_cmd->add_option("--cases", e_cases, "JSON-Lines eval cases")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--mode", e_mode, "prompt_aware or prompt_agnostic")
      ->check(CLI::IsMember({"prompt_aware", "prompt_agnostic"}));
  eval_cmd->add_option("--out", e_out, "JSON report path")->required();
  eval_cmd->add_option("--csv", e_csv, "Per-case CSV path");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP compression service");
  std::string s_host = "127.0.0.1";
  int s_port = 8080;
  int s_startup_ms = 30000;
  serve_cmd->add_option("--host", s_host, "Bind address");
  serve_cmd->add_option("--port", s_port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--startup-timeout-ms", s_startup_ms, "Backend health deadline before serving");

  auto* version_cmd = app.add_subcommand("version", "Print engine version and config digest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    EngineConfig cfg = config_path.empty() ? EngineConfig{} : load_config(config_path);

    if (*version_cmd) {
      out << version_json(config_digest(cfg)).dump(2) << "\n";
      return kExitOk;
    }

    if (*compress_cmd) {
      CompressionConstraint constraint = cfg.constraint;
      if (c_budget) constraint = CompressionConstraint::token_budget(*c_budget);
      if (c_ratio) constraint = CompressionConstraint::compression_ratio(*c_ratio);
      if (c_topk) constraint = CompressionConstraint::top_k(*c_topk);
      constraint.validate();
      const std::string text = c_in.empty() ? std::string(std::istreambuf_iterator<char>(in), {}) : read_file(c_in);
      RunContext run(cfg, "compress", {{c_in.empty() ? "stdin" : c_in, sha256_hex(text)}});
      const auto backends = make_backends(cfg);
      const RawDocument doc{c_in.empty() ? "stdin" : basename_of(c_in), text, {}};
      const std::optional<std::string> question =
          compress_cmd->count("--question") ? std::optional<std::string>(c_question) : std::nullopt;
      const auto result = compress_document(cfg, backends, doc, question, constraint);
      if (c_out.empty()) {
        out << result.prompt.text << "\n";
      } else {
        write_file(c_out, result.prompt.text + "\n");
      }
      if (!c_stats.empty()) {
        auto stats = compression_json(result, run.digest);
        stats["run_id"] = run.run_id;
        write_file(c_stats, stats.dump(2) + "\n");
      }
      if (result.prompt.empty_selection) err << "warning: no sentence fits the budget; output is empty\n";
      return kExitOk;
    }

    if (*curate_cmd) {
      const auto corpus = load_corpus(k_corpus);
      const auto backends = make_backends(cfg);
      auto opts = curation_options(cfg);
      opts.tokenizer = backends.tokenizer.get();
      std::string records;
      std::vector<Reject> rejects;
      std::size_t attempted = 0;
      std::size_t emitted = 0;
      std::string command;
      if (*ctd_cmd) {
        command = k_raw_only ? "curate ctd --raw-only" : "curate ctd";
        auto raw = curate_ctd_raw(corpus, *backends.llm, opts);
        attempted = raw.attempted;
        rejects = raw.rejects;
        if (!k_raw_only) {
          auto structured = structure_ctd(raw.records, *backends.llm, opts);
          rejects.insert(rejects.end(), structured.rejects.begin(), structured.rejects.end());
          raw.records = std::move(structured.records);
        }
        emitted = raw.records.size();
        records = to_jsonl(raw.records, [](const CtdPair& p) { return to_json_value(p); });
      } else {
        command = "curate mcqr";
        auto res = curate_mcqr(corpus, *backends.llm, opts);
        attempted = res.attempted;
        rejects = std::move(res.rejects);
        emitted = res.records.size();
        const auto mode = cfg.positive_export;
        records = to_jsonl(res.records, [mode](const McqrTuple& t) { return to_json_value(t, mode); });
      }
      RunContext run(cfg, command, {{k_corpus, input_digest(k_corpus)}});
      write_file(k_out, records);
      write_file(rejects_path(k_out), to_jsonl(rejects, [](const Reject& r) { return to_json_value(r); }));
      write_manifest(k_out, run.manifest(emitted, {{"attempted", attempted}, {"rejected", rejects.size()}}));
      err << command << ": " << emitted << " emitted, " << rejects.size() << " rejected of " << attempted << "\n";
      return kExitOk;
    }

    if (*refine_cmd) {
      if (r_doc.empty() == r_corpus.empty()) {
        err << "reward refine: exactly one of --doc or --corpus is required\n";
        return kExitUsage;
      }
      if (r_n) cfg.n_candidates = *r_n;
      if (cfg.n_candidates < 2) {
        err << "reward refine: --n must be >= 2\n";
        return kExitUsage;
      }
      const std::string source = r_doc.empty() ? r_corpus : r_doc;
      std::vector<RawDocument> docs =
          r_doc.empty() ? load_corpus(r_corpus)
                        : std::vector<RawDocument>{{std::filesystem::path(r_doc).stem().string(), read_file(r_doc), {}}};
      RunContext run(cfg, "reward refine", {{source, input_digest(source)}});
      const auto backends = make_backends(cfg);
      const auto opts = refine_options(cfg, run.provenance());
      ResponseCache cache;
      std::vector<SftRecord> sft;
      std::vector<std::string> skipped;
      std::string reward_lines;
      for (const auto& doc : docs) {
        try {
          auto res = refine_step(doc, backends.refine(), opts, &cache);
          for (const auto& r : res.rewards) {
            auto j = reward_record_json(r);
            j["doc_id"] = doc.id;
            j["selected"] = r.candidate.candidate_rank == res.rewards[res.selected_rank].candidate.candidate_rank;
            reward_lines += j.dump() + "\n";
          }
          sft.push_back(std::move(res.sft));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyCompressionPool && e.code() != ErrorCode::EmptyDocument) throw;
          skipped.push_back(doc.id);
        }
      }
      emit_sft_dataset(sft, r_out, run.provenance(), run.created_at,
                       run.manifest(sft.size(), {{"attempted", docs.size()}, {"skipped", skipped}}));
      if (!r_rewards.empty()) write_file(r_rewards, reward_lines);
      err << "reward refine: " << sft.size() << " records, " << skipped.size() << " skipped\n";
      return kExitOk;
    }

    if (*eval_cmd) {
      const auto cases = load_cases(e_cases);
      const auto mode = parse_eval_mode(e_mode);
      RunContext run(cfg, "eval " + e_mode, {{e_cases, input_digest(e_cases)}});
      const auto backends = make_backends(cfg);
      const auto report = run_eval(cases, backends.eval(), eval_options(cfg, mode, run.run_id, run.digest));
      auto j = to_json_value(report);
      j["created_at"] = run.created_at;
      write_file(e_out, j.dump(2) + "\n");
      if (!e_csv.empty()) write_file(e_csv, to_csv(report));
      return kExitOk;
    }

    if (*serve_cmd) {
      auto backends = make_backends(cfg);
      Service svc(ServiceState(cfg, std::move(backends)));
      const int port = svc.start(s_host, s_port);
      err << "listening on " << s_host << ":" << port << "\n";
      if (!svc.startup_check(std::chrono::milliseconds(s_startup_ms))) {
        err << "backends did not become healthy within " << s_startup_ms << " ms\n";
        svc.stop();
        return kExitBackend;
      }
      err << "ready\n";
      detail::g_stop_requested = false;
      std::signal(SIGINT, detail::on_stop_signal);
      std::signal(SIGTERM, detail::on_stop_signal);
      while (!detail::g_stop_requested.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      svc.stop();
      err << "stopped\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace tpc::cli
